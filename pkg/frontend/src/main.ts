/** Browser wiring: WebSocket transport with reconnect, canvas views,
 * and the control strip. All state lives in OperatorSession; this file
 * only moves events in and pixels out.
 */
import { backoffMs, OperatorSession } from "./session.js";
import {
  canvasToWorld, DEFAULT_VIEWPORT, drawMasks, drawScene,
} from "./render.js";

const session = new OperatorSession();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const sceneCanvas = el<HTMLCanvasElement>("scene");
const maskCanvas = el<HTMLCanvasElement>("masks");
const statusEl = el<HTMLSpanElement>("status");
const bannerEl = el<HTMLDivElement>("banner");
const logEl = el<HTMLUListElement>("log");
const toastsEl = el<HTMLDivElement>("toasts");
const instructionInput = el<HTMLInputElement>("instruction");
const sendBtn = el<HTMLButtonElement>("send");
const claspBtn = el<HTMLButtonElement>("clasp");
const resetBtn = el<HTMLButtonElement>("reset");
const pauseBtn = el<HTMLButtonElement>("pause");

const endpoint =
  new URLSearchParams(location.search).get("server") ??
  `ws://${location.hostname || "127.0.0.1"}:8765`;

let socket: WebSocket | null = null;

function connect(): void {
  statusEl.textContent = session.reconnectAttempts
    ? `reconnecting (attempt ${session.reconnectAttempts})`
    : "connecting";
  socket = new WebSocket(endpoint);
  socket.onopen = () => session.attach({ send: (f) => socket?.send(f) });
  socket.onmessage = (ev) => session.handleFrame(String(ev.data));
  socket.onclose = () => {
    session.detach();
    if (session.status === "version-mismatch") return;
    const wait = backoffMs(session.reconnectAttempts++);
    setTimeout(connect, wait);
  };
  socket.onerror = () => socket?.close();
}

function shownToastCount(): number {
  return Number(toastsEl.dataset.shown ?? "0");
}

function render(): void {
  statusEl.textContent = session.status;
  bannerEl.textContent = session.banner;
  bannerEl.style.display = session.banner ? "block" : "none";

  for (const btn of [sendBtn, claspBtn, resetBtn, pauseBtn]) {
    btn.disabled = session.locked;
  }

  logEl.replaceChildren(
    ...session.log.slice(-12).map((entry) => {
      const li = document.createElement("li");
      li.textContent =
        `#${entry.seq} ${entry.summary} — ${entry.status}` +
        (entry.reason ? ` (${entry.reason})` : "");
      li.className = entry.status;
      return li;
    }),
  );

  for (const toast of session.toasts.slice(shownToastCount())) {
    const div = document.createElement("div");
    div.className = `toast ${toast.kind}`;
    div.textContent = toast.text;
    toastsEl.appendChild(div);
    setTimeout(() => div.remove(), 6000);
  }
  toastsEl.dataset.shown = String(session.toasts.length);

  if (session.snapshot) {
    drawScene(sceneCanvas.getContext("2d")!, session.snapshot);
    drawMasks(maskCanvas.getContext("2d")!, session.snapshot);
  }
}

session.onChange(render);

sendBtn.onclick = () => {
  const text = instructionInput.value.trim();
  if (text) session.sendInstruction(text);
};
instructionInput.onkeydown = (ev) => {
  if (ev.key === "Enter" && !session.locked) sendBtn.click();
};
claspBtn.onclick = () => session.clasp();
resetBtn.onclick = () => session.reset();
pauseBtn.onclick = () => session.pause();

// drag the palm marker to reposition the virtual hand
let dragging = false;
sceneCanvas.onpointerdown = (ev) => {
  const snap = session.snapshot;
  if (!snap) return;
  const rect = sceneCanvas.getBoundingClientRect();
  const [wx, wy] = canvasToWorld(
    ev.clientX - rect.left, ev.clientY - rect.top,
    DEFAULT_VIEWPORT, sceneCanvas.width, sceneCanvas.height);
  const [hx, hy] = [snap.hand.position[0], snap.hand.position[1]];
  if (Math.hypot(wx - hx, wy - hy) < 0.05) dragging = true;
};
sceneCanvas.onpointerup = (ev) => {
  if (!dragging) return;
  dragging = false;
  const snap = session.snapshot;
  if (!snap || session.locked) return;
  const rect = sceneCanvas.getBoundingClientRect();
  const [wx, wy] = canvasToWorld(
    ev.clientX - rect.left, ev.clientY - rect.top,
    DEFAULT_VIEWPORT, sceneCanvas.width, sceneCanvas.height);
  session.moveHand(wx, wy, snap.hand.position[2]);
};

connect();
