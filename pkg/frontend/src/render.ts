/** Canvas drawing for the top-down scene view and the camera-space mask
 * panel. Pure functions over the latest snapshot: no animation state.
 */
import { InstrumentView, StateSnapshot, rleDecode } from "./protocol.js";

export const MASK_RESOLUTION = 224;

/** World window shown in the top-down view (meters). */
export interface Viewport {
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

export const DEFAULT_VIEWPORT: Viewport = {
  xMin: -0.05,
  xMax: 1.05,
  yMin: -0.55,
  yMax: 0.55,
};

export function worldToCanvas(
  x: number, y: number, vp: Viewport, width: number, height: number,
): [number, number] {
  // world x grows to the right, world y up; canvas y grows down
  const u = ((x - vp.xMin) / (vp.xMax - vp.xMin)) * width;
  const v = ((vp.yMax - y) / (vp.yMax - vp.yMin)) * height;
  return [u, v];
}

export function canvasToWorld(
  u: number, v: number, vp: Viewport, width: number, height: number,
): [number, number] {
  const x = vp.xMin + (u / width) * (vp.xMax - vp.xMin);
  const y = vp.yMax - (v / height) * (vp.yMax - vp.yMin);
  return [x, y];
}

export function footprintWorldPolygon(inst: InstrumentView): [number, number][] {
  const c = Math.cos(inst.yaw);
  const s = Math.sin(inst.yaw);
  return inst.footprint.map(([px, py]) => [
    inst.position[0] + c * px - s * py,
    inst.position[1] + s * px + c * py,
  ]);
}

function polygon(
  ctx: CanvasRenderingContext2D, pts: [number, number][], vp: Viewport,
  w: number, h: number,
): void {
  ctx.beginPath();
  pts.forEach(([x, y], i) => {
    const [u, v] = worldToCanvas(x, y, vp, w, h);
    if (i === 0) ctx.moveTo(u, v);
    else ctx.lineTo(u, v);
  });
  ctx.closePath();
}

export function drawScene(
  ctx: CanvasRenderingContext2D, state: StateSnapshot,
  vp: Viewport = DEFAULT_VIEWPORT,
): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#1b2430";
  ctx.fillRect(0, 0, w, h);

  for (const inst of state.instruments) {
    if (inst.held_by === "gripper") continue; // drawn at the gripper below
    polygon(ctx, footprintWorldPolygon(inst), vp, w, h);
    ctx.fillStyle = inst.broken ? "#7a2d2d" : "#4f7f4f";
    ctx.fill();
    ctx.strokeStyle = "#cfe3cf";
    ctx.stroke();
    const [u, v] = worldToCanvas(inst.position[0], inst.position[1], vp, w, h);
    ctx.fillStyle = "#dde7ee";
    ctx.font = "11px sans-serif";
    ctx.fillText(inst.label, u + 6, v - 6);
  }

  // arm linkage straight from the snapshot's link points
  ctx.beginPath();
  state.links.forEach(([x, y], i) => {
    const [u, v] = worldToCanvas(x, y, vp, w, h);
    if (i === 0) ctx.moveTo(u, v);
    else ctx.lineTo(u, v);
  });
  ctx.strokeStyle = "#e8b44a";
  ctx.lineWidth = 4;
  ctx.stroke();
  ctx.lineWidth = 1;

  const [gu, gv] = worldToCanvas(
    state.gripper.position[0], state.gripper.position[1], vp, w, h);
  ctx.beginPath();
  ctx.arc(gu, gv, 6, 0, 2 * Math.PI);
  ctx.fillStyle = state.gripper.closed ? "#e8b44a" : "#1b2430";
  ctx.strokeStyle = "#e8b44a";
  ctx.fill();
  ctx.stroke();
  const held = state.instruments.find((i) => i.held_by === "gripper");
  if (held) {
    ctx.fillStyle = "#dde7ee";
    ctx.fillText(`holding ${held.label}`, gu + 8, gv + 12);
  }

  const [hu, hv] = worldToCanvas(
    state.hand.position[0], state.hand.position[1], vp, w, h);
  ctx.beginPath();
  ctx.arc(hu, hv, 10, 0, 2 * Math.PI);
  ctx.fillStyle = state.hand.clasp ? "#9a6fd0" : "#5a4a7a";
  ctx.fill();
  ctx.strokeStyle = "#cabdf0";
  ctx.stroke();
  ctx.fillStyle = "#cabdf0";
  ctx.fillText("hand", hu + 12, hv + 4);
}

/** Paint the RLE mask overlays into an ImageData-sized RGBA buffer;
 * target mask in green, hand mask in violet. Exported separately so the
 * compositing is testable without a DOM canvas. */
export function maskPixels(
  target: number[] | undefined, hand: number[] | undefined,
): Uint8ClampedArray<ArrayBuffer> {
  const n = MASK_RESOLUTION * MASK_RESOLUTION;
  const rgba = new Uint8ClampedArray(new ArrayBuffer(4 * n));
  const t = target ? rleDecode(target, n) : null;
  const h = hand ? rleDecode(hand, n) : null;
  for (let i = 0; i < n; i++) {
    const o = 4 * i;
    if (t && t[i]) {
      rgba[o] = 64; rgba[o + 1] = 200; rgba[o + 2] = 96; rgba[o + 3] = 200;
    }
    if (h && h[i]) {
      rgba[o] = 154; rgba[o + 1] = 111; rgba[o + 2] = 208; rgba[o + 3] = 200;
    }
  }
  return rgba;
}

export function drawMasks(
  ctx: CanvasRenderingContext2D, state: StateSnapshot,
): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, w, h);
  if (!state.masks) {
    ctx.fillStyle = "#8494a7";
    ctx.fillText("no active instruction", 10, 20);
    return;
  }
  const rgba = maskPixels(state.masks.target, state.masks.hand);
  const img = new ImageData(rgba, MASK_RESOLUTION, MASK_RESOLUTION);
  ctx.putImageData(img, 0, 0);
}
