/**
 * Console wiring: a 2-second poll keeps the grid in sync with the service;
 * submissions are optimistic and roll back when the server refuses them.
 * Digit keys 1..K label the selected (least-confident by default) card.
 */

import { ConsoleApi, LabelRejectedError, type ClassOption } from "./api.js";
import {
  applyFetchFailure,
  applyQueue,
  applyStatus,
  beginSubmit,
  confirmSubmit,
  emptyState,
  rejectSubmit,
  selectCard,
  type ConsoleState,
} from "./state.js";
import { render, type Handlers } from "./render.js";

const POLL_INTERVAL_MS = 2000;

const api = new ConsoleApi("");
let state: ConsoleState = emptyState();
let classes: ClassOption[] = [];
let root: HTMLElement;

function redraw(): void {
  render(root, state, classes, handlers);
}

async function submit(id: number, wireClass: number): Promise<void> {
  if (!state.items.some((it) => it.id === id)) {
    return; // stale click on an already-submitted card
  }
  state = beginSubmit(state, id);
  redraw();
  try {
    const ack = await api.submitLabel(id, wireClass);
    state = confirmSubmit(state, id, ack.outstanding);
  } catch (err) {
    const message =
      err instanceof LabelRejectedError
        ? `#${id}: ${err.message}`
        : "submit failed, check the connection";
    state = rejectSubmit(state, id, message);
  }
  redraw();
}

const handlers: Handlers = {
  onLabel: (id, wireClass) => void submit(id, wireClass),
  onSelect: (id) => {
    state = selectCard(state, id);
    redraw();
  },
};

async function poll(): Promise<void> {
  try {
    const [queue, status] = await Promise.all([
      api.fetchQueue(),
      api.fetchStatus(),
    ]);
    state = applyStatus(applyQueue(state, queue), status);
  } catch {
    state = applyFetchFailure(state);
  }
  redraw();
}

function onKey(ev: KeyboardEvent): void {
  const digit = Number(ev.key);
  if (!Number.isInteger(digit) || digit < 1 || digit > classes.length) {
    return;
  }
  if (state.selectedId !== null) {
    void submit(state.selectedId, digit);
  }
}

async function init(): Promise<void> {
  root = document.body;
  for (;;) {
    try {
      classes = await api.fetchClasses();
      break;
    } catch {
      state = applyFetchFailure(state);
      redraw();
      await new Promise((r) => setTimeout(r, POLL_INTERVAL_MS));
    }
  }
  document.addEventListener("keydown", onKey);
  await poll();
  setInterval(() => void poll(), POLL_INTERVAL_MS);
}

void init();
