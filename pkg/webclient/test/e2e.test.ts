// @vitest-environment happy-dom
//
// Full-stack round-trip: spawns the real engine (python service), connects
// one websocket per role, mounts the DOM client for each, and walks every
// delivery path of a high-impact prompt plus the low-impact auto path.
import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Role } from "../src/protocol.js";
import { ClientStore } from "../src/store.js";
import { mountClient } from "../src/ui.js";

const VIOLATION = "norm-breach";
const HIGH = "severity-high";

const ENGINE_CONFIG = {
  listen: "127.0.0.1:0",
  categories: ["greeting", "request", "apology", "criticism", "persuasion", "thanks", "farewell"],
  languages: { SME: "en", FLE: "zh" },
  choice_timeout_s: 1.5,
  backends: {
    ASR: { primary: { kind: "LocalStub", config: {} } },
    MT: { primary: { kind: "LocalStub", config: { dictionary: { hello: "你好" } } } },
    CategoryCls: { primary: { kind: "RuleBased", config: { rules: [["sorry", "apology"]] } } },
    ViolationCls: { primary: { kind: "RuleBased", config: { rules: [[VIOLATION, "1"]] } } },
    ImpactCls: { primary: { kind: "RuleBased", config: { rules: [[HIGH, "high"]] } } },
    RemediationGen: { primary: { kind: "LocalStub", config: {} } },
    JustificationGen: { primary: { kind: "LocalStub", config: {} } },
  },
};

let engine: ChildProcess;
let wsUrl: string;

interface Client {
  store: ClientStore;
  socket: WebSocket;
  root: HTMLElement;
}

const clients: Client[] = [];

function startEngine(): Promise<string> {
  const dir = mkdtempSync(join(tmpdir(), "normbridge-e2e-"));
  const configPath = join(dir, "config.json");
  writeFileSync(configPath, JSON.stringify(ENGINE_CONFIG));
  engine = spawn("python3", ["-m", "normbridge.cli", "serve", "--config", configPath], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("engine never became ready")), 15000);
    let buffer = "";
    engine.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/ready on (ws:\/\/[\d.]+:\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]!);
      }
    });
    engine.on("exit", (code) => reject(new Error(`engine exited early: ${code}`)));
  });
}

function connect(role: Role, sessionId: string): Promise<Client> {
  const socket = new WebSocket(`${wsUrl}/ws`);
  const store = new ClientStore(role, sessionId, (data) => socket.send(data));
  const root = document.createElement("div");
  root.id = `client-${role}-${clients.length}`;
  document.body.appendChild(root);
  mountClient(root, store);
  socket.on("message", (data) => store.applyRaw(data.toString()));
  socket.on("close", () => store.setConnected(false));
  const client = { store, socket, root };
  clients.push(client);
  return new Promise((resolve, reject) => {
    socket.on("error", reject);
    socket.on("open", () => {
      store.sendHello();
      store.setConnected(true);
      resolve(client);
    });
  });
}

async function until(check: () => boolean, label: string, timeoutMs = 8000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (check()) return;
    await new Promise((r) => setTimeout(r, 20));
  }
  throw new Error(`timed out waiting for ${label}`);
}

function testId(root: HTMLElement, id: string): HTMLElement {
  const node = root.querySelector(`[data-testid="${id}"]`);
  if (!node) throw new Error(`missing element ${id}`);
  return node as HTMLElement;
}

function click(node: HTMLElement): void {
  node.dispatchEvent(new MouseEvent("click", { bubbles: true }));
}

beforeAll(async () => {
  wsUrl = await startEngine();
}, 30000);

afterAll(async () => {
  for (const client of clients) {
    try {
      client.socket.close();
    } catch {
      /* already closed */
    }
  }
  if (engine && engine.exitCode === null) {
    engine.removeAllListeners("exit");
    engine.kill("SIGTERM");
    await new Promise((resolve) => engine.on("exit", resolve));
  }
});

describe("UI round-trip against the live engine", () => {
  it("walks remediation choice, translation choice, timeout, and auto paths", async () => {
    const sme = await connect("SME", "e2e");
    const fle = await connect("FLE", "e2e");

    // --- high-impact turn, sender picks the remediation -------------------
    const input = testId(sme.root, "ptt-input") as HTMLTextAreaElement;
    input.value = `a ${VIOLATION} ${HIGH} remark one`;
    testId(sme.root, "ptt-button").dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));

    await until(() => sme.store.prompt !== null, "correction prompt");
    const prompt1 = sme.store.prompt!;
    expect(testId(sme.root, "prompt-translation").textContent).toBe(prompt1.translation);
    expect(testId(sme.root, "prompt-remediation").textContent).toBe(prompt1.remediation);
    expect(testId(sme.root, "prompt-justification").textContent).toBe(prompt1.justification);
    expect(prompt1.translation.length).toBeGreaterThan(0);
    expect(prompt1.remediation.length).toBeGreaterThan(0);
    expect(prompt1.justification.length).toBeGreaterThan(0);

    click(testId(sme.root, "choose-remediation"));
    await until(() => fle.store.receivedTexts().length === 1, "first delivery");
    // Exactly the remediation text appears in the receiver pane.
    expect(fle.store.receivedTexts()).toEqual([prompt1.remediation]);
    expect(fle.store.receivedTexts()).not.toContain(prompt1.translation);
    await until(() => sme.store.prompt === null, "prompt dismissal");

    // --- high-impact turn, sender keeps their own words --------------------
    input.value = `a ${VIOLATION} ${HIGH} remark two`;
    testId(sme.root, "ptt-button").dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    await until(() => sme.store.prompt !== null, "second prompt");
    const prompt2 = sme.store.prompt!;
    click(testId(sme.root, "choose-translation"));
    await until(() => fle.store.receivedTexts().length === 2, "second delivery");
    expect(fle.store.receivedTexts()[1]).toBe(prompt2.translation);
    expect(fle.store.receivedTexts()).not.toContain(prompt2.remediation);

    // --- high-impact turn, no answer: engine default after the timeout -----
    input.value = `a ${VIOLATION} ${HIGH} remark three`;
    testId(sme.root, "ptt-button").dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    await until(() => sme.store.prompt !== null, "third prompt");
    const prompt3 = sme.store.prompt!;
    await until(() => fle.store.receivedTexts().length === 3, "timeout delivery", 12000);
    expect(fle.store.receivedTexts()[2]).toBe(prompt3.translation); // policy default
    await until(() => sme.store.prompt === null, "timeout prompt dismissal");
    expect(sme.store.notices.some((n) => n.includes("timeout"))).toBe(true);

    // --- two clean turns to flush the high markers out of the impact window --
    for (const text of ["hello", "hello again friends"]) {
      input.value = text;
      testId(sme.root, "ptt-button").dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
      const want = fle.store.receivedTexts().length + 1;
      await until(() => fle.store.receivedTexts().length === want, `clean delivery ${want}`);
    }
    expect(fle.store.receivedTexts()[3]).toBe("你好"); // dictionary MT

    // --- low-impact turn: auto-remediation, no prompt -----------------------
    input.value = `a ${VIOLATION} mild remark`;
    testId(sme.root, "ptt-button").dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    await until(() => fle.store.receivedTexts().length === 6, "auto delivery");
    expect(fle.store.receivedTexts()[5]!.startsWith("Could you please")).toBe(true);
    expect(sme.store.prompt).toBeNull();

    // Receiver never saw a prompt; prompts go to the sender only.
    expect(fle.store.prompt).toBeNull();
  }, 40000);

  it("rebuilds a refreshed client from hello + sync alone", async () => {
    const fresh = await connect("FLE", "e2e");
    await until(() => fresh.store.entries.length >= 6, "sync rebuild");
    const original = clients.find((c) => c.store.role === "FLE" && c !== fresh)!;
    expect(fresh.store.receivedTexts()).toEqual(original.store.receivedTexts());
  }, 20000);
});
