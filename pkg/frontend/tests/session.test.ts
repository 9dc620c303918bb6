import { beforeEach, describe, expect, it } from "vitest";
import { encodeFrame, StateSnapshot } from "../src/protocol.js";
import { backoffMs, OperatorSession, Transport } from "../src/session.js";

class FakeTransport implements Transport {
  sent: string[] = [];
  send(frame: string): void {
    this.sent.push(frame);
  }
}

function snapshot(extra: Partial<StateSnapshot> = {}): string {
  const base: StateSnapshot = {
    type: "state", time: 0.1, running: true, paused: false,
    joints: [0, 0, 0, 0, 0, 0],
    links: [[0, 0, 0], [0.2, 0, 0.3]],
    gripper: { position: [0.4, 0, 0.2], closed: false },
    hand: { position: [0.5, 0.3, 0.25], clasp: false },
    instruments: [], masks: null, events: [], outcome: null,
  };
  return encodeFrame({ ...base, ...extra });
}

describe("operator session", () => {
  let transport: FakeTransport;
  let session: OperatorSession;

  beforeEach(() => {
    transport = new FakeTransport();
    session = new OperatorSession();
    session.attach(transport);
  });

  function handshake(): void {
    session.handleFrame(encodeFrame({ type: "hello", version: 1 }));
  }

  it("answers the handshake and unlocks", () => {
    expect(session.locked).toBe(true);
    handshake();
    expect(session.status).toBe("connected");
    expect(transport.sent).toEqual([encodeFrame({ type: "hello", version: 1 })]);
    expect(session.locked).toBe(false);
  });

  it("flags a version mismatch instead of proceeding", () => {
    session.handleFrame(encodeFrame({ type: "hello", version: 2 }));
    expect(session.status).toBe("version-mismatch");
    expect(session.banner).toContain("protocol v2");
    expect(transport.sent).toEqual([]); // no reply to an incompatible server
  });

  it("ignores state frames before the handshake completes", () => {
    session.handleFrame(snapshot());
    expect(session.snapshot).toBeNull();
    handshake();
    session.handleFrame(snapshot());
    expect(session.snapshot?.time).toBe(0.1);
  });

  it("locks controls while a command is pending, unlocks on ack", () => {
    handshake();
    const seq = session.sendInstruction("give me the forceps");
    expect(session.locked).toBe(true);
    session.handleFrame(encodeFrame({ type: "ack", seq }));
    expect(session.locked).toBe(false);
    expect(session.log[0].status).toBe("acked");
  });

  it("keeps the ack/command bijection: duplicate replies are violations", () => {
    handshake();
    const seq = session.clasp();
    session.handleFrame(encodeFrame({ type: "ack", seq }));
    session.handleFrame(encodeFrame({ type: "ack", seq }));
    expect(session.log[0].resolutions).toBe(2);
    expect(session.violations.some((v) => v.includes(`seq ${seq}`))).toBe(true);
    session.handleFrame(encodeFrame({ type: "ack", seq: 999 }));
    expect(session.violations.some((v) => v.includes("unknown seq"))).toBe(true);
  });

  it("renders server error replies verbatim", () => {
    handshake();
    const seq = session.sendInstruction("give me the scalpel");
    const reason = "UnknownInstrument: scalpel";
    session.handleFrame(encodeFrame({ type: "error", reason, seq }));
    expect(session.log[0].status).toBe("error");
    expect(session.log[0].reason).toBe(reason);
    expect(session.toasts.at(-1)).toEqual({ kind: "failure", text: reason });
  });

  it("toasts terminal events from state frames", () => {
    handshake();
    session.handleFrame(snapshot({
      events: [{ kind: "HandoverSuccess", subject: "forceps" }],
      outcome: "success",
    }));
    const kinds = session.toasts.map((t) => t.kind);
    expect(kinds).toContain("success");
    expect(session.toasts.some((t) => t.text.includes("HandoverSuccess"))).toBe(true);
  });

  it("preserves command history across a reconnect", () => {
    handshake();
    const seq = session.sendInstruction("give me the forceps");
    session.handleFrame(encodeFrame({ type: "ack", seq }));
    session.detach();
    expect(session.status).toBe("disconnected");
    const again = new FakeTransport();
    session.attach(again);
    session.handleFrame(encodeFrame({ type: "hello", version: 1 }));
    expect(session.status).toBe("connected");
    expect(session.log).toHaveLength(1); // history survived
  });

  it("assigns strictly increasing sequence numbers", () => {
    handshake();
    const a = session.clasp();
    const b = session.pause();
    const c = session.reset(5);
    expect(b).toBe(a + 1);
    expect(c).toBe(b + 1);
  });
});

describe("reconnect backoff", () => {
  it("doubles and saturates", () => {
    expect(backoffMs(0)).toBe(500);
    expect(backoffMs(1)).toBe(1000);
    expect(backoffMs(4)).toBe(8000);
    expect(backoffMs(10)).toBe(8000);
  });
});
