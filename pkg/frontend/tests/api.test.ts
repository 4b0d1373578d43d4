import { afterEach, describe, expect, test, vi } from "vitest";

import { ConsoleApi, LabelRejectedError } from "../src/api.js";

function jsonResponse(status: number, doc: unknown): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("ConsoleApi", () => {
  test("fetchQueue returns the snapshot as-is", async () => {
    const doc = { round: 3, items: [{ id: 1, confidence: 0.4 }] };
    vi.stubGlobal("fetch", vi.fn(async () => jsonResponse(200, doc)));
    const api = new ConsoleApi("http://x");
    expect(await api.fetchQueue()).toEqual(doc);
    expect(fetch).toHaveBeenCalledWith("http://x/queue");
  });

  test("fetchClasses unwraps the 1-based options", async () => {
    const doc = {
      classes: [
        { value: 1, name: "basophil" },
        { value: 2, name: "eosinophil" },
      ],
    };
    vi.stubGlobal("fetch", vi.fn(async () => jsonResponse(200, doc)));
    const api = new ConsoleApi("");
    const classes = await api.fetchClasses();
    expect(classes.map((c) => c.value)).toEqual([1, 2]);
  });

  test("submitLabel posts id and 1-based class", async () => {
    const mock = vi.fn(async () => jsonResponse(200, {
      ok: true,
      outstanding: 4,
    }));
    vi.stubGlobal("fetch", mock);
    const api = new ConsoleApi("");
    const ack = await api.submitLabel(17, 2);
    expect(ack.outstanding).toBe(4);
    const [url, init] = mock.mock.calls[0] as [string, RequestInit];
    expect(url).toBe("/label");
    expect(JSON.parse(init.body as string)).toEqual({ id: 17, class: 2 });
  });

  test("a refusal surfaces the server's message and status", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () =>
        jsonResponse(409, { error: "id 5 already labeled differently" }),
      ),
    );
    const api = new ConsoleApi("");
    const err = await api.submitLabel(5, 1).catch((e) => e);
    expect(err).toBeInstanceOf(LabelRejectedError);
    expect(err.status).toBe(409);
    expect(err.message).toMatch(/already labeled/);
  });

  test("GET failures throw with the status code", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => jsonResponse(500, {})));
    const api = new ConsoleApi("");
    await expect(api.fetchStatus()).rejects.toThrow(/500/);
  });

  test("network errors propagate to the caller", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => {
        throw new TypeError("fetch failed");
      }),
    );
    const api = new ConsoleApi("");
    await expect(api.fetchQueue()).rejects.toThrow(/fetch failed/);
  });
});
