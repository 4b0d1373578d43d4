/**
 * Console state and its transitions, kept free of DOM and network code.
 *
 * The server is the single source of truth: every poll rebuilds the visible
 * queue from GET /queue and the progress counter from GET /status, so a page
 * refresh loses nothing. The only client-side bookkeeping is the set of
 * optimistic removals awaiting their acknowledgment.
 */

import type { QueueItem, QueueSnapshot, StatusDoc } from "./api.js";

export interface ConsoleState {
  round: number;
  /** Pending cards, ascending confidence (ties by id), server-ordered. */
  items: QueueItem[];
  /** Optimistically removed cards, keyed by id, awaiting the server. */
  inFlight: Map<number, QueueItem>;
  outstanding: number;
  queued: number;
  labeled: number;
  selectedId: number | null;
  /** Transient error/retry notice; null when all is well. */
  banner: string | null;
  /** True while the last poll failed; existing cards stay untouched. */
  unreachable: boolean;
}

export function emptyState(): ConsoleState {
  return {
    round: 0,
    items: [],
    inFlight: new Map(),
    outstanding: 0,
    queued: 0,
    labeled: 0,
    selectedId: null,
    banner: null,
    unreachable: false,
  };
}

function byConfidenceThenId(a: QueueItem, b: QueueItem): number {
  return a.confidence - b.confidence || a.id - b.id;
}

/** An item the card renderer cannot draw; it is flagged, never dropped. */
export function isMalformed(item: QueueItem): boolean {
  if (typeof item.id !== "number" || typeof item.confidence !== "number") {
    return true;
  }
  if (item.point !== undefined) {
    return !Array.isArray(item.point) || item.point.length < 2;
  }
  if (item.image_b64 !== undefined) {
    return typeof item.image_b64 !== "string" ||
      !Array.isArray(item.shape) ||
      item.shape.length !== 3;
  }
  return true; // neither representation present
}

/** Rebuild the visible queue from a server snapshot. */
export function applyQueue(
  state: ConsoleState,
  snap: QueueSnapshot,
): ConsoleState {
  const roundChanged = snap.round !== state.round;
  // a new round invalidates any acknowledgments still in flight
  const inFlight = roundChanged ? new Map<number, QueueItem>() : state.inFlight;
  const items = snap.items
    .filter((it) => !inFlight.has(it.id))
    .slice()
    .sort(byConfidenceThenId);
  const ids = new Set<number>();
  for (const it of items) {
    if (ids.has(it.id)) {
      throw new Error(`duplicate id ${it.id} in queue snapshot`);
    }
    ids.add(it.id);
  }
  const selectedId =
    state.selectedId !== null && ids.has(state.selectedId)
      ? state.selectedId
      : items.length > 0
        ? items[0]!.id
        : null;
  return {
    ...state,
    round: snap.round,
    items,
    inFlight,
    selectedId,
    banner: roundChanged ? null : state.banner,
    unreachable: false,
  };
}

export function applyStatus(
  state: ConsoleState,
  status: StatusDoc,
): ConsoleState {
  return {
    ...state,
    outstanding: status.outstanding,
    queued: status.queued,
    labeled: status.labeled,
    unreachable: false,
  };
}

/** The poll failed; keep every card and show a retry notice. */
export function applyFetchFailure(state: ConsoleState): ConsoleState {
  return {
    ...state,
    banner: "annotation service unreachable, retrying",
    unreachable: true,
  };
}

/**
 * Optimistically remove a card for submission. Labels may only target ids
 * currently on screen, so an unknown id is a programming error.
 */
export function beginSubmit(state: ConsoleState, id: number): ConsoleState {
  const item = state.items.find((it) => it.id === id);
  if (item === undefined) {
    throw new Error(`id ${id} is not in the queue`);
  }
  const items = state.items.filter((it) => it.id !== id);
  const inFlight = new Map(state.inFlight);
  inFlight.set(id, item);
  const selectedId =
    state.selectedId === id
      ? items.length > 0
        ? items[0]!.id
        : null
      : state.selectedId;
  return { ...state, items, inFlight, selectedId };
}

/** The server accepted the label; drop the card for good. */
export function confirmSubmit(
  state: ConsoleState,
  id: number,
  outstanding: number,
): ConsoleState {
  const inFlight = new Map(state.inFlight);
  inFlight.delete(id);
  return { ...state, inFlight, outstanding, banner: null };
}

/** The server refused; the card returns to its ascending-confidence slot. */
export function rejectSubmit(
  state: ConsoleState,
  id: number,
  message: string,
): ConsoleState {
  const inFlight = new Map(state.inFlight);
  const item = inFlight.get(id);
  inFlight.delete(id);
  const items =
    item !== undefined
      ? [...state.items, item].sort(byConfidenceThenId)
      : state.items;
  return {
    ...state,
    items,
    inFlight,
    banner: message,
    selectedId: state.selectedId ?? (item !== undefined ? item.id : null),
  };
}

export function selectCard(state: ConsoleState, id: number): ConsoleState {
  if (!state.items.some((it) => it.id === id)) {
    return state;
  }
  return { ...state, selectedId: id };
}

export function selectedItem(state: ConsoleState): QueueItem | null {
  return state.items.find((it) => it.id === state.selectedId) ?? null;
}
