/** Live round-trip against the Python session service: connect, request
 * an instrument, watch the arm move, trigger the clasp at the right
 * moment, and expect the success toast — with every sent command
 * acknowledged exactly once.
 */
import { spawn, ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";
import { StateSnapshot } from "../src/protocol.js";
import { OperatorSession } from "../src/session.js";

const PORT = 8941;

let server: ChildProcess;
let socket: WebSocket;
const session = new OperatorSession();

function waitFor(
  predicate: () => boolean, timeoutMs = 20000, label = "condition",
): Promise<void> {
  return new Promise((resolve, reject) => {
    const started = Date.now();
    const timer = setInterval(() => {
      if (predicate()) {
        clearInterval(timer);
        resolve();
      } else if (Date.now() - started > timeoutMs) {
        clearInterval(timer);
        reject(new Error(`timed out waiting for ${label}`));
      }
    }, 20);
  });
}

beforeAll(async () => {
  server = spawn(
    "python3",
    ["-m", "scrubsim.cli", "serve", "--port", String(PORT), "--seed", "3"],
    { cwd: "..", stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  server.stderr?.on("data", (d) => { stderr += d; });
  // retry until the service accepts connections
  await waitFor(() => server.exitCode === null, 2000, "server spawn");
  for (let attempt = 0; ; attempt++) {
    try {
      await new Promise<void>((resolve, reject) => {
        socket = new WebSocket(`ws://127.0.0.1:${PORT}`);
        socket.once("open", () => resolve());
        socket.once("error", reject);
      });
      break;
    } catch (e) {
      if (attempt > 40) throw new Error(`server never came up: ${stderr}`);
      await new Promise((r) => setTimeout(r, 250));
    }
  }
  session.attach({ send: (frame) => socket.send(frame) });
  socket.on("message", (data) => session.handleFrame(data.toString()));
}, 30000);

afterAll(() => {
  socket?.close();
  server?.kill();
});

describe("console round-trip", () => {
  it("completes a handover end to end", async () => {
    await waitFor(() => session.status === "connected", 5000, "handshake");

    await waitFor(() => session.snapshot !== null, 1000, "first snapshot");
    const before = session.snapshot!.joints.slice();

    const seq = session.sendInstruction("give me 7mm clamp");
    await waitFor(
      () => session.log.find((e) => e.seq === seq)?.status === "acked",
      5000, "instruction ack");

    // arm motion must show up in subsequent snapshots
    await waitFor(() => {
      const now = session.snapshot!.joints;
      return now.some((q, i) => Math.abs(q - before[i]) > 1e-3);
    }, 10000, "arm motion");

    // clasp once the gripper presents the instrument at the palm
    const near = (s: StateSnapshot) =>
      Math.hypot(
        s.gripper.position[0] - s.hand.position[0],
        s.gripper.position[1] - s.hand.position[1],
        s.gripper.position[2] - s.hand.position[2],
      ) < 0.06 && s.instruments.some((i) => i.held_by === "gripper");
    await waitFor(() => near(session.snapshot!), 30000, "presentation");
    session.clasp();

    await waitFor(
      () => session.toasts.some(
        (t) => t.kind === "success" && t.text.includes("HandoverSuccess")),
      10000, "success toast");

    // every command resolved exactly once, no protocol violations
    for (const entry of session.log) {
      expect(entry.resolutions).toBe(1);
      expect(entry.status).toBe("acked");
    }
    expect(session.violations).toEqual([]);
  }, 60000);
});
