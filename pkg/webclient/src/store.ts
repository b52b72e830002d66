/**
 * View-model for one role's client: transcript entries, the pending
 * correction prompt, connection state, and outbound frame construction.
 *
 * The store is DOM-free so tests can drive it directly; ui.ts projects it
 * into the page. All state is rebuildable from the wire protocol alone
 * (hello -> sync ack -> live frames), which makes refreshes safe.
 */

import {
  ProtocolError,
  Role,
  WireFrame,
  decodeFrame,
  encodeFrame,
  helloFrame,
} from "./protocol.js";

export interface Entry {
  turnId: string;
  direction: "sent" | "received" | "system";
  label: string;
  text: string;
}

export interface PendingPrompt {
  turnId: string;
  translation: string;
  remediation: string;
  justification: string;
  locked: boolean;
}

export type SenderChoice = "Translation" | "Remediation";

export class ClientStore {
  readonly role: Role;
  readonly sessionId: string;

  connected = false;
  banner: string | null = "connecting…";
  entries: Entry[] = [];
  prompt: PendingPrompt | null = null;
  notices: string[] = [];

  private seq = 0;
  private readonly sendText: (data: string) => void;
  private readonly listeners: Array<() => void> = [];

  constructor(role: Role, sessionId: string, sendText: (data: string) => void) {
    this.role = role;
    this.sessionId = sessionId;
    this.sendText = sendText;
  }

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  private nextSeq(): number {
    this.seq += 1;
    return this.seq;
  }

  private send(frame: WireFrame): void {
    this.sendText(encodeFrame(frame));
  }

  // -- connection lifecycle -------------------------------------------------

  sendHello(): void {
    this.send(helloFrame(this.sessionId, this.role, this.nextSeq()));
  }

  setConnected(connected: boolean, reason?: string): void {
    this.connected = connected;
    this.banner = connected ? null : (reason ?? "disconnected — input disabled");
    this.emit();
  }

  // -- outbound -------------------------------------------------------------

  /** Press-to-talk release: one speech frame per non-empty utterance. */
  pressToTalk(text: string): boolean {
    if (!this.connected) {
      this.banner = "disconnected — input disabled";
      this.emit();
      return false;
    }
    const trimmed = text.trim();
    if (!trimmed) return false;
    this.send({
      type: "speech",
      session_id: this.sessionId,
      identity: this.role,
      seq: this.nextSeq(),
      body: { text: trimmed },
    });
    return true;
  }

  /** Resolve the pending prompt; it locks after the first selection. */
  choose(choice: SenderChoice): boolean {
    if (!this.prompt || this.prompt.locked || !this.connected) return false;
    this.send({
      type: "choice",
      session_id: this.sessionId,
      turn_id: this.prompt.turnId,
      identity: this.role,
      seq: this.nextSeq(),
      body: { choice },
    });
    this.prompt = { ...this.prompt, locked: true };
    this.emit();
    return true;
  }

  // -- inbound ----------------------------------------------------------------

  applyRaw(data: string): void {
    let frame: WireFrame;
    try {
      frame = decodeFrame(data);
    } catch (err) {
      if (err instanceof ProtocolError) {
        this.notices.push(`protocol error: ${err.message}`);
        this.emit();
        return;
      }
      throw err;
    }
    this.applyFrame(frame);
  }

  applyFrame(frame: WireFrame): void {
    switch (frame.type) {
      case "transcript":
        this.addEntry(frame.turn_id ?? "", "sent", "you said", str(frame.body.text));
        break;
      case "translation":
        this.addEntry(frame.turn_id ?? "", "sent", "translated", str(frame.body.text));
        break;
      case "deliver":
        // The receiver pane shows exactly the delivered text; which variant
        // it was is deliberately not surfaced.
        this.addEntry(frame.turn_id ?? "", "received", "partner", str(frame.body.text));
        break;
      case "correction_prompt":
        this.prompt = {
          turnId: frame.turn_id ?? "",
          translation: str(frame.body.translation),
          remediation: str(frame.body.remediation),
          justification: str(frame.body.justification),
          locked: false,
        };
        break;
      case "ack":
        this.applyAck(frame);
        break;
      case "error":
        this.notices.push(str(frame.body.message ?? "unknown engine error"));
        break;
      default:
        break;
    }
    this.emit();
  }

  private applyAck(frame: WireFrame): void {
    if (frame.body.sync === true) {
      this.rebuildFromSync(frame.body.history);
      return;
    }
    if (frame.body.resolved !== true) return;
    const turnId = frame.turn_id ?? "";
    const kind = frame.body.delivery_kind;
    const choice = frame.body.sender_choice;
    if (this.prompt && this.prompt.turnId === turnId) {
      if (!this.prompt.locked) {
        // Stale or timed-out prompt: dismiss with a notice.
        const how = choice === "TimedOut" ? "no choice before timeout" : "already resolved";
        this.notices.push(`prompt dismissed (${how}); delivered ${str(kind)}`);
      }
      this.prompt = null;
    }
    if (typeof kind === "string") {
      this.addEntry(turnId, "system", "delivered", `${str(kind)} sent to partner`);
    }
  }

  private rebuildFromSync(history: unknown): void {
    this.entries = [];
    if (!Array.isArray(history)) return;
    for (const item of history) {
      if (item === null || typeof item !== "object") continue;
      const row = item as Record<string, unknown>;
      const turnId = str(row.turn_id);
      if (row.speaker === this.role) {
        this.addEntry(turnId, "sent", "you said", str(row.source_text));
        if (typeof row.translated_text === "string") {
          this.addEntry(turnId, "sent", "translated", row.translated_text);
        }
        if (typeof row.delivery_kind === "string") {
          this.addEntry(turnId, "system", "delivered", `${row.delivery_kind} sent to partner`);
        }
      } else if (typeof row.delivered_text === "string") {
        this.addEntry(turnId, "received", "partner", row.delivered_text);
      }
    }
  }

  /** Append unless an identical (turn, label) entry already exists; reconnect
   * flushes and sync frames may both describe the same turn. */
  private addEntry(turnId: string, direction: Entry["direction"], label: string,
                   text: string): void {
    if (this.entries.some((e) => e.turnId === turnId && e.label === label)) return;
    this.entries.push({ turnId, direction, label, text });
  }

  receivedTexts(): string[] {
    return this.entries.filter((e) => e.direction === "received").map((e) => e.text);
  }
}

function str(value: unknown): string {
  return typeof value === "string" ? value : String(value ?? "");
}
