/** Wire format shared with the session service.
 *
 * Every message is one text frame "<decimal length>:<json>", where the
 * length counts the UTF-8 bytes of the JSON payload. The carrier is a
 * WebSocket, one frame per message.
 */

export const PROTOCOL_VERSION = 1;

export class ProtocolError extends Error {}

export interface Hello {
  type: "hello";
  version: number;
}

export interface Ack {
  type: "ack";
  seq: number;
}

export interface ErrorReply {
  type: "error";
  reason: string;
  seq?: number;
}

export interface GripperView {
  position: [number, number, number];
  closed: boolean;
}

export interface HandView {
  position: [number, number, number];
  clasp: boolean;
}

export interface InstrumentView {
  label: string;
  position: [number, number, number];
  yaw: number;
  held_by: string | null;
  broken: boolean;
  footprint: [number, number][];
}

export interface MaskOverlays {
  target: number[];
  hand: number[];
}

export interface StateSnapshot {
  type: "state";
  time: number;
  running: boolean;
  paused: boolean;
  joints: number[];
  links: [number, number, number][];
  gripper: GripperView;
  hand: HandView;
  instruments: InstrumentView[];
  masks: MaskOverlays | null;
  events: { kind: string; subject: string | null }[];
  outcome: string | null;
}

export type ServerMessage = Hello | Ack | ErrorReply | StateSnapshot;

export type ClientMessage =
  | { type: "hello"; version: number }
  | { type: "instruction"; text: string; seq: number }
  | { type: "move_hand"; pose: { x: number; y: number; z: number }; seq: number }
  | { type: "clasp"; seq: number }
  | { type: "reset"; seed?: number; seq: number }
  | { type: "pause"; seq: number };

const utf8 = new TextEncoder();

export function encodeFrame(obj: object): string {
  const payload = JSON.stringify(obj);
  return `${utf8.encode(payload).length}:${payload}`;
}

export function decodeFrame(frame: string): ServerMessage {
  const sep = frame.indexOf(":");
  if (sep < 1) throw new ProtocolError("frame is not length-prefixed");
  const head = frame.slice(0, sep);
  if (!/^[0-9]+$/.test(head)) throw new ProtocolError("bad length prefix");
  const payload = frame.slice(sep + 1);
  if (Number(head) !== utf8.encode(payload).length) {
    throw new ProtocolError("frame length mismatch");
  }
  let obj: unknown;
  try {
    obj = JSON.parse(payload);
  } catch {
    throw new ProtocolError("payload is not valid JSON");
  }
  if (typeof obj !== "object" || obj === null || !("type" in obj)) {
    throw new ProtocolError("payload must be an object with a 'type'");
  }
  return obj as ServerMessage;
}

/** Expand a run-length encoded bitmap (alternating zero/one run lengths,
 * starting with a zero run) into a flat boolean array. */
export function rleDecode(runs: number[], size: number): Uint8Array {
  const out = new Uint8Array(size);
  let at = 0;
  let value = 0;
  for (const run of runs) {
    if (value) out.fill(1, at, at + run);
    at += run;
    value ^= 1;
  }
  if (at !== size) throw new ProtocolError("mask run lengths do not cover the bitmap");
  return out;
}
