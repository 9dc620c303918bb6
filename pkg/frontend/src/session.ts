/** Transport-agnostic client session state.
 *
 * Owns the handshake, the per-command sequence numbers, the command log
 * with its ack/error bookkeeping, and the latest acknowledged snapshot.
 * The UI renders exclusively from this object; it never extrapolates
 * beyond the last received state frame.
 */
import {
  ClientMessage, PROTOCOL_VERSION, ProtocolError, ServerMessage,
  StateSnapshot, decodeFrame, encodeFrame,
} from "./protocol.js";

export type ConnectionStatus =
  | "connecting"
  | "handshaking"
  | "connected"
  | "version-mismatch"
  | "disconnected";

export type CommandStatus = "pending" | "acked" | "error";

export interface CommandEntry {
  seq: number;
  summary: string;
  status: CommandStatus;
  reason?: string;
  /** how many resolutions arrived; the protocol promises exactly one */
  resolutions: number;
}

export interface Toast {
  kind: "success" | "failure" | "info";
  text: string;
}

export interface Transport {
  send(frame: string): void;
}

const TERMINAL_EVENTS: Record<string, Toast["kind"]> = {
  HandoverSuccess: "success",
  HandoverMiss: "failure",
  ObjectBroken: "failure",
};

export function backoffMs(attempt: number): number {
  return Math.min(500 * 2 ** attempt, 8000);
}

export class OperatorSession {
  status: ConnectionStatus = "connecting";
  banner = "";
  snapshot: StateSnapshot | null = null;
  log: CommandEntry[] = [];
  toasts: Toast[] = [];
  violations: string[] = [];
  reconnectAttempts = 0;
  private transport: Transport | null = null;
  private nextSeq = 1;
  private listeners: (() => void)[] = [];

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private changed(): void {
    for (const fn of this.listeners) fn();
  }

  /** Called by the transport layer when a socket opens. The command
   * history survives reconnects; only connection state resets. */
  attach(transport: Transport): void {
    this.transport = transport;
    this.status = "handshaking";
    this.banner = "";
    this.changed();
  }

  detach(): void {
    this.transport = null;
    if (this.status !== "version-mismatch") this.status = "disconnected";
    this.changed();
  }

  /** Commands stay locked until every sent message has its reply. */
  get locked(): boolean {
    return (
      this.status !== "connected" ||
      this.log.some((e) => e.status === "pending")
    );
  }

  handleFrame(raw: string): void {
    let msg: ServerMessage;
    try {
      msg = decodeFrame(raw);
    } catch (e) {
      this.violations.push(e instanceof ProtocolError ? e.message : String(e));
      this.changed();
      return;
    }
    switch (msg.type) {
      case "hello":
        if (msg.version !== PROTOCOL_VERSION) {
          this.status = "version-mismatch";
          this.banner =
            `Server speaks protocol v${msg.version}, this console ` +
            `speaks v${PROTOCOL_VERSION}. Update one of them.`;
        } else {
          this.transport?.send(
            encodeFrame({ type: "hello", version: PROTOCOL_VERSION }),
          );
          this.status = "connected";
          this.reconnectAttempts = 0;
        }
        break;
      case "ack":
        this.resolve(msg.seq, "acked");
        break;
      case "error":
        if (msg.seq !== undefined) {
          this.resolve(msg.seq, "error", msg.reason);
        } else {
          this.toasts.push({ kind: "failure", text: msg.reason });
        }
        break;
      case "state":
        if (this.status === "connected") this.applyState(msg);
        break;
      default:
        this.violations.push(`unknown message type ${(msg as { type: string }).type}`);
    }
    this.changed();
  }

  private resolve(seq: number, status: CommandStatus, reason?: string): void {
    const entry = this.log.find((e) => e.seq === seq);
    if (!entry) {
      this.violations.push(`reply for unknown seq ${seq}`);
      return;
    }
    entry.resolutions += 1;
    if (entry.resolutions > 1) {
      this.violations.push(`seq ${seq} resolved ${entry.resolutions} times`);
      return;
    }
    entry.status = status;
    entry.reason = reason;
    if (status === "error" && reason) {
      this.toasts.push({ kind: "failure", text: reason });
    }
  }

  private applyState(state: StateSnapshot): void {
    const previousOutcome = this.snapshot?.outcome ?? null;
    this.snapshot = state;
    for (const ev of state.events) {
      const kind = TERMINAL_EVENTS[ev.kind];
      if (kind) {
        this.toasts.push({
          kind,
          text: ev.subject ? `${ev.kind}: ${ev.subject}` : ev.kind,
        });
      }
    }
    if (state.outcome && state.outcome !== previousOutcome) {
      this.toasts.push({ kind: "info", text: `episode over: ${state.outcome}` });
    }
  }

  private send(msg: ClientMessage & { seq: number }, summary: string): number {
    if (!this.transport) throw new Error("not connected");
    this.log.push({ seq: msg.seq, summary, status: "pending", resolutions: 0 });
    this.transport.send(encodeFrame(msg));
    this.changed();
    return msg.seq;
  }

  sendInstruction(text: string): number {
    return this.send(
      { type: "instruction", text, seq: this.nextSeq++ },
      `instruction: ${text}`,
    );
  }

  moveHand(x: number, y: number, z: number): number {
    return this.send(
      { type: "move_hand", pose: { x, y, z }, seq: this.nextSeq++ },
      `move hand to (${x.toFixed(3)}, ${y.toFixed(3)}, ${z.toFixed(3)})`,
    );
  }

  clasp(): number {
    return this.send({ type: "clasp", seq: this.nextSeq++ }, "clasp");
  }

  reset(seed?: number): number {
    return this.send(
      { type: "reset", ...(seed !== undefined ? { seed } : {}), seq: this.nextSeq++ },
      seed !== undefined ? `reset (seed ${seed})` : "reset",
    );
  }

  pause(): number {
    return this.send({ type: "pause", seq: this.nextSeq++ }, "pause/resume");
  }
}
