import { describe, expect, test } from "vitest";

import type { QueueItem, QueueSnapshot } from "../src/api.js";
import {
  applyFetchFailure,
  applyQueue,
  applyStatus,
  beginSubmit,
  confirmSubmit,
  emptyState,
  isMalformed,
  rejectSubmit,
  selectCard,
  selectedItem,
} from "../src/state.js";

function item(id: number, confidence: number): QueueItem {
  return { id, confidence, point: [0.1, -0.2] };
}

function snap(round: number, items: QueueItem[]): QueueSnapshot {
  return { round, items };
}

describe("queue snapshots", () => {
  test("items render in ascending confidence order", () => {
    const state = applyQueue(
      emptyState(),
      snap(1, [item(3, 0.9), item(1, 0.4), item(2, 0.7)]),
    );
    expect(state.items.map((it) => it.id)).toEqual([1, 2, 3]);
    expect(state.selectedId).toBe(1); // least confident first
  });

  test("confidence ties order by id", () => {
    const state = applyQueue(
      emptyState(),
      snap(1, [item(9, 0.5), item(4, 0.5), item(7, 0.5)]),
    );
    expect(state.items.map((it) => it.id)).toEqual([4, 7, 9]);
  });

  test("duplicate ids in a snapshot are rejected", () => {
    expect(() =>
      applyQueue(emptyState(), snap(1, [item(5, 0.2), item(5, 0.3)])),
    ).toThrow(/duplicate id 5/);
  });

  test("state is reconstructible from queue plus status alone", () => {
    const queue = snap(2, [item(1, 0.3), item(2, 0.6)]);
    const status = { round: 2, queued: 5, labeled: 3, outstanding: 2 };
    const a = applyStatus(applyQueue(emptyState(), queue), status);
    const b = applyStatus(applyQueue(emptyState(), queue), status);
    expect(a).toEqual(b);
    expect(a.outstanding).toBe(2);
    expect(a.labeled).toBe(3);
  });

  test("empty queue clears selection", () => {
    let state = applyQueue(emptyState(), snap(1, [item(1, 0.4)]));
    state = applyQueue(state, snap(1, []));
    expect(state.items).toEqual([]);
    expect(state.selectedId).toBeNull();
  });
});

describe("optimistic submission", () => {
  test("begin removes the card, reject restores its slot", () => {
    let state = applyQueue(
      emptyState(),
      snap(1, [item(1, 0.2), item(2, 0.5), item(3, 0.8)]),
    );
    state = beginSubmit(state, 2);
    expect(state.items.map((it) => it.id)).toEqual([1, 3]);
    expect(state.inFlight.has(2)).toBe(true);

    state = rejectSubmit(state, 2, "already labeled differently");
    expect(state.items.map((it) => it.id)).toEqual([1, 2, 3]);
    expect(state.inFlight.size).toBe(0);
    expect(state.banner).toMatch(/already labeled/);
  });

  test("confirm drops the card and adopts the server counter", () => {
    let state = applyQueue(emptyState(), snap(1, [item(1, 0.2)]));
    state = beginSubmit(state, 1);
    state = confirmSubmit(state, 1, 9);
    expect(state.items).toEqual([]);
    expect(state.inFlight.size).toBe(0);
    expect(state.outstanding).toBe(9);
  });

  test("labels cannot target an id that is not on screen", () => {
    const state = applyQueue(emptyState(), snap(1, [item(1, 0.2)]));
    expect(() => beginSubmit(state, 77)).toThrow(/not in the queue/);
  });

  test("a poll while a submit is in flight does not resurrect the card", () => {
    let state = applyQueue(
      emptyState(),
      snap(1, [item(1, 0.2), item(2, 0.5)]),
    );
    state = beginSubmit(state, 1);
    // the server has not recorded the label yet, so /queue still lists it
    state = applyQueue(state, snap(1, [item(1, 0.2), item(2, 0.5)]));
    expect(state.items.map((it) => it.id)).toEqual([2]);
  });

  test("a new round clears stale in-flight entries", () => {
    let state = applyQueue(emptyState(), snap(1, [item(1, 0.2)]));
    state = beginSubmit(state, 1);
    state = applyQueue(state, snap(2, [item(8, 0.6)]));
    expect(state.inFlight.size).toBe(0);
    expect(state.items.map((it) => it.id)).toEqual([8]);
  });

  test("selection advances to the least-confident card after submit", () => {
    let state = applyQueue(
      emptyState(),
      snap(1, [item(1, 0.2), item(2, 0.5), item(3, 0.8)]),
    );
    state = beginSubmit(state, 1);
    expect(state.selectedId).toBe(2);
  });
});

describe("failure handling", () => {
  test("unreachable service keeps every card and raises the banner", () => {
    let state = applyQueue(
      emptyState(),
      snap(1, [item(1, 0.2), item(2, 0.5)]),
    );
    state = applyFetchFailure(state);
    expect(state.items).toHaveLength(2);
    expect(state.unreachable).toBe(true);
    expect(state.banner).toMatch(/retrying/);
  });

  test("a successful poll clears the unreachable flag", () => {
    let state = applyFetchFailure(emptyState());
    state = applyQueue(state, snap(1, [item(1, 0.3)]));
    expect(state.unreachable).toBe(false);
  });
});

describe("selection and payload checks", () => {
  test("selecting an on-screen card sticks, off-screen is ignored", () => {
    let state = applyQueue(
      emptyState(),
      snap(1, [item(1, 0.2), item(2, 0.5)]),
    );
    state = selectCard(state, 2);
    expect(selectedItem(state)?.id).toBe(2);
    state = selectCard(state, 99);
    expect(selectedItem(state)?.id).toBe(2);
  });

  test("payloads without a drawable representation are flagged", () => {
    expect(isMalformed({ id: 1, confidence: 0.5 })).toBe(true);
    expect(isMalformed({ id: 1, confidence: 0.5, point: [0, 1] })).toBe(false);
    expect(
      isMalformed({
        id: 1,
        confidence: 0.5,
        image_b64: "AAAA",
        shape: [28, 28, 1],
      }),
    ).toBe(false);
    expect(
      isMalformed({ id: 1, confidence: 0.5, image_b64: "AAAA" }),
    ).toBe(true);
  });
});
