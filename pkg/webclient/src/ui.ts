/**
 * DOM projection of a ClientStore: connection banner, transcript, the
 * correction prompt, and the press-to-talk input. Full repaint per change;
 * fine at conversation scale.
 */

import { ClientStore } from "./store.js";

function el(doc: Document, tag: string, testId?: string, text?: string): HTMLElement {
  const node = doc.createElement(tag);
  if (testId) node.setAttribute("data-testid", testId);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function mountClient(root: HTMLElement, store: ClientStore): void {
  const doc = root.ownerDocument;
  root.innerHTML = "";

  const header = el(doc, "header");
  header.appendChild(el(doc, "h2", "role-title", `${store.role} panel`));
  const banner = el(doc, "div", "banner");
  banner.className = "banner";
  header.appendChild(banner);
  root.appendChild(header);

  const transcript = el(doc, "ul", "transcript");
  transcript.className = "transcript";
  root.appendChild(transcript);

  const promptBox = el(doc, "section", "prompt");
  promptBox.className = "prompt hidden";
  root.appendChild(promptBox);

  const notices = el(doc, "ul", "notices");
  notices.className = "notices";
  root.appendChild(notices);

  const inputRow = el(doc, "div");
  inputRow.className = "ptt-row";
  const input = el(doc, "textarea", "ptt-input") as HTMLTextAreaElement;
  input.placeholder = "hold to talk: press, type, release";
  const button = el(doc, "button", "ptt-button", "Hold to talk") as HTMLButtonElement;
  inputRow.appendChild(input);
  inputRow.appendChild(button);
  root.appendChild(inputRow);

  // Press-to-talk: the frame goes out on release (mouseup / Enter keyup).
  const release = () => {
    if (store.pressToTalk(input.value)) {
      input.value = "";
    }
  };
  button.addEventListener("mouseup", release);
  input.addEventListener("keyup", (event) => {
    if ((event as KeyboardEvent).key === "Enter") release();
  });

  const render = () => {
    banner.textContent = store.banner ?? "";
    banner.classList.toggle("hidden", store.banner === null);
    input.disabled = !store.connected;
    button.disabled = !store.connected;

    transcript.innerHTML = "";
    for (const entry of store.entries) {
      const li = el(doc, "li", undefined, `${entry.label}: ${entry.text}`);
      li.className = `entry entry-${entry.direction}`;
      li.setAttribute("data-turn", entry.turnId);
      li.setAttribute("data-label", entry.label);
      transcript.appendChild(li);
    }

    notices.innerHTML = "";
    for (const notice of store.notices.slice(-3)) {
      notices.appendChild(el(doc, "li", undefined, notice));
    }

    promptBox.innerHTML = "";
    const prompt = store.prompt;
    promptBox.classList.toggle("hidden", prompt === null);
    if (prompt) {
      promptBox.appendChild(
        el(doc, "h3", undefined, "This may land badly with your partner")
      );
      const translation = el(doc, "p", "prompt-translation", prompt.translation);
      const remediation = el(doc, "p", "prompt-remediation", prompt.remediation);
      promptBox.appendChild(translation);
      promptBox.appendChild(remediation);
      const chooseTranslation = el(
        doc, "button", "choose-translation", "Send my words"
      ) as HTMLButtonElement;
      const chooseRemediation = el(
        doc, "button", "choose-remediation", "Send the rewrite"
      ) as HTMLButtonElement;
      chooseTranslation.disabled = prompt.locked;
      chooseRemediation.disabled = prompt.locked;
      chooseTranslation.addEventListener("click", () => store.choose("Translation"));
      chooseRemediation.addEventListener("click", () => store.choose("Remediation"));
      promptBox.appendChild(chooseTranslation);
      promptBox.appendChild(chooseRemediation);
      // Justification folds away under the prompt.
      const details = el(doc, "details");
      details.appendChild(el(doc, "summary", undefined, "Why?"));
      details.appendChild(el(doc, "p", "prompt-justification", prompt.justification));
      promptBox.appendChild(details);
    }
  };

  store.onChange(render);
  render();
}
