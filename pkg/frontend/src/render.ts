/** DOM rendering: one full rebuild of the card grid per state change. */

import type { ClassOption, QueueItem } from "./api.js";
import { isMalformed, type ConsoleState } from "./state.js";

export interface Handlers {
  onLabel: (id: number, wireClass: number) => void;
  onSelect: (id: number) => void;
}

function drawImage(canvas: HTMLCanvasElement, item: QueueItem): void {
  const [h, w, c] = item.shape as [number, number, number];
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  const raw = atob(item.image_b64 ?? "");
  const img = ctx.createImageData(w, h);
  for (let i = 0; i < w * h; i++) {
    for (let ch = 0; ch < 3; ch++) {
      img.data[4 * i + ch] = raw.charCodeAt(i * c + (c === 3 ? ch : 0));
    }
    img.data[4 * i + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

function drawPoint(canvas: HTMLCanvasElement, item: QueueItem): void {
  const size = 96;
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  const [x, y] = item.point as [number, number];
  // features live roughly in [-2.5, 2.5]^2; map that box onto the canvas
  const px = ((x + 2.5) / 5) * size;
  const py = ((2.5 - y) / 5) * size;
  ctx.fillStyle = "#f4f4f4";
  ctx.fillRect(0, 0, size, size);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(size / 2, 0);
  ctx.lineTo(size / 2, size);
  ctx.moveTo(0, size / 2);
  ctx.lineTo(size, size / 2);
  ctx.stroke();
  ctx.fillStyle = "#c2410c";
  ctx.beginPath();
  ctx.arc(px, py, 4, 0, 2 * Math.PI);
  ctx.fill();
}

function card(
  item: QueueItem,
  classes: ClassOption[],
  selected: boolean,
  handlers: Handlers,
): HTMLElement {
  const el = document.createElement("article");
  el.className = selected ? "card selected" : "card";
  el.dataset.id = String(item.id);
  el.addEventListener("click", () => handlers.onSelect(item.id));

  const head = document.createElement("header");
  head.textContent = `#${item.id} · conf ${item.confidence.toFixed(3)}`;
  el.appendChild(head);

  if (isMalformed(item)) {
    const warn = document.createElement("p");
    warn.className = "malformed";
    warn.textContent = "payload not renderable";
    el.appendChild(warn);
  } else {
    const canvas = document.createElement("canvas");
    if (item.point !== undefined) {
      drawPoint(canvas, item);
    } else {
      drawImage(canvas, item);
    }
    el.appendChild(canvas);
  }

  const row = document.createElement("div");
  row.className = "choices";
  for (const opt of classes) {
    const btn = document.createElement("button");
    btn.textContent = `${opt.value} ${opt.name}`;
    btn.addEventListener("click", (ev) => {
      ev.stopPropagation();
      handlers.onLabel(item.id, opt.value);
    });
    row.appendChild(btn);
  }
  el.appendChild(row);
  return el;
}

export function render(
  root: HTMLElement,
  state: ConsoleState,
  classes: ClassOption[],
  handlers: Handlers,
): void {
  const banner = root.querySelector<HTMLElement>("#banner");
  if (banner !== null) {
    banner.textContent = state.banner ?? "";
    banner.hidden = state.banner === null;
  }
  const progress = root.querySelector<HTMLElement>("#progress");
  if (progress !== null) {
    progress.textContent =
      `round ${state.round} · ${state.labeled}/${state.queued} labeled · ` +
      `${state.outstanding} outstanding`;
  }
  const grid = root.querySelector<HTMLElement>("#grid");
  if (grid === null) {
    return;
  }
  grid.replaceChildren();
  if (state.items.length === 0 && state.inFlight.size === 0) {
    const idle = document.createElement("p");
    idle.className = "idle";
    idle.textContent = state.unreachable
      ? "no connection"
      : "waiting for next round";
    grid.appendChild(idle);
    return;
  }
  for (const item of state.items) {
    grid.appendChild(card(item, classes, item.id === state.selectedId,
      handlers));
  }
}
