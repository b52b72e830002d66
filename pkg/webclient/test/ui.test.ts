// @vitest-environment happy-dom
import { beforeEach, describe, expect, it } from "vitest";

import { WireFrame, decodeFrame } from "../src/protocol.js";
import { ClientStore } from "../src/store.js";
import { mountClient } from "../src/ui.js";

let sent: WireFrame[];
let store: ClientStore;
let root: HTMLElement;

function byTestId(id: string): HTMLElement {
  const node = root.querySelector(`[data-testid="${id}"]`);
  if (!node) throw new Error(`missing element ${id}`);
  return node as HTMLElement;
}

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app")!;
  sent = [];
  store = new ClientStore("SME", "s1", (data) => sent.push(decodeFrame(data)));
  mountClient(root, store);
  store.setConnected(true);
});

function showPrompt(): void {
  store.applyFrame({
    type: "correction_prompt",
    session_id: "s1",
    turn_id: "t1",
    seq: 1,
    body: {
      translation: "blunt words",
      remediation: "softer words",
      justification: "culture gap",
    },
  });
}

describe("panel rendering", () => {
  it("shows the role title and hides the banner when connected", () => {
    expect(byTestId("role-title").textContent).toContain("SME");
    expect(byTestId("banner").classList.contains("hidden")).toBe(true);
  });

  it("disables input with a visible banner when disconnected", () => {
    store.setConnected(false);
    expect(byTestId("banner").classList.contains("hidden")).toBe(false);
    expect((byTestId("ptt-input") as HTMLTextAreaElement).disabled).toBe(true);
    expect((byTestId("ptt-button") as HTMLButtonElement).disabled).toBe(true);
  });

  it("renders transcript entries as they arrive", () => {
    store.applyFrame({
      type: "deliver",
      session_id: "s1",
      turn_id: "t9",
      seq: 1,
      body: { text: "你好", kind: "Translation", error: null },
    });
    const items = root.querySelectorAll('[data-testid="transcript"] li');
    expect(items).toHaveLength(1);
    expect(items[0]!.textContent).toContain("你好");
  });
});

describe("press-to-talk widget", () => {
  it("release sends the utterance and clears the input", () => {
    const input = byTestId("ptt-input") as HTMLTextAreaElement;
    input.value = "hello there";
    byTestId("ptt-button").dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    expect(sent).toHaveLength(1);
    expect(sent[0]!.body.text).toBe("hello there");
    expect(input.value).toBe("");
  });

  it("empty input sends nothing", () => {
    byTestId("ptt-button").dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    expect(sent).toHaveLength(0);
  });
});

describe("correction prompt box", () => {
  it("renders translation, remediation, and justification", () => {
    showPrompt();
    expect(byTestId("prompt").classList.contains("hidden")).toBe(false);
    expect(byTestId("prompt-translation").textContent).toBe("blunt words");
    expect(byTestId("prompt-remediation").textContent).toBe("softer words");
    expect(byTestId("prompt-justification").textContent).toBe("culture gap");
  });

  it("clicking a choice emits the frame and locks both buttons", () => {
    showPrompt();
    byTestId("choose-remediation").dispatchEvent(new MouseEvent("click", { bubbles: true }));
    expect(sent).toHaveLength(1);
    expect(sent[0]!.body.choice).toBe("Remediation");
    expect((byTestId("choose-remediation") as HTMLButtonElement).disabled).toBe(true);
    expect((byTestId("choose-translation") as HTMLButtonElement).disabled).toBe(true);
  });

  it("prompt disappears after the resolution ack", () => {
    showPrompt();
    byTestId("choose-translation").dispatchEvent(new MouseEvent("click", { bubbles: true }));
    store.applyFrame({
      type: "ack",
      session_id: "s1",
      turn_id: "t1",
      seq: 2,
      body: { resolved: true, delivery_kind: "Translation", sender_choice: "Translation" },
    });
    expect(byTestId("prompt").classList.contains("hidden")).toBe(true);
  });
});
