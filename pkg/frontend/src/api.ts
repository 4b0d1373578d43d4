/**
 * Typed client for the annotation service.
 *
 * The service exposes exactly four routes: GET /queue, GET /status,
 * GET /classes and POST /label. Class values travel 1-based on the wire.
 */

export interface QueueItem {
  id: number;
  confidence: number;
  image_b64?: string;
  shape?: number[];
  point?: [number, number];
}

export interface QueueSnapshot {
  round: number;
  items: QueueItem[];
}

export interface StatusDoc {
  round: number;
  queued: number;
  labeled: number;
  outstanding: number;
  state?: string;
  n_labeled?: number;
  n_unlabeled?: number;
}

export interface ClassOption {
  value: number; // 1-based wire value, also the keyboard shortcut
  name: string;
}

export interface SubmitAck {
  ok: boolean;
  outstanding: number;
}

/** A submission the server refused (bad class, unknown id, conflict). */
export class LabelRejectedError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "LabelRejectedError";
  }
}

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  if (!res.ok) {
    throw new Error(`GET ${url} failed with ${res.status}`);
  }
  return (await res.json()) as T;
}

export class ConsoleApi {
  constructor(readonly baseUrl: string = "") {}

  fetchQueue(): Promise<QueueSnapshot> {
    return getJson<QueueSnapshot>(`${this.baseUrl}/queue`);
  }

  fetchStatus(): Promise<StatusDoc> {
    return getJson<StatusDoc>(`${this.baseUrl}/status`);
  }

  async fetchClasses(): Promise<ClassOption[]> {
    const doc = await getJson<{ classes: ClassOption[] }>(
      `${this.baseUrl}/classes`,
    );
    return doc.classes;
  }

  /** POST one label; resolves on 2xx, rejects with the server's message. */
  async submitLabel(id: number, wireClass: number): Promise<SubmitAck> {
    const res = await fetch(`${this.baseUrl}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id, class: wireClass }),
    });
    const doc = await res.json().catch(() => ({}));
    if (!res.ok) {
      throw new LabelRejectedError(
        res.status,
        (doc as { error?: string }).error ?? `submit failed (${res.status})`,
      );
    }
    return doc as SubmitAck;
  }
}
