/**
 * Browser entry point: a two-button role picker, then a live client panel
 * over the engine's websocket.
 */
import { ClientStore } from "./store.js";
import { mountClient } from "./ui.js";
function wsUrl() {
    const scheme = location.protocol === "https:" ? "wss" : "ws";
    return `${scheme}://${location.host}/ws`;
}
function start(root, role, sessionId) {
    const socket = new WebSocket(wsUrl());
    const store = new ClientStore(role, sessionId, (data) => socket.send(data));
    mountClient(root, store);
    socket.addEventListener("open", () => {
        store.sendHello();
        store.setConnected(true);
    });
    socket.addEventListener("message", (event) => store.applyRaw(String(event.data)));
    socket.addEventListener("close", () => store.setConnected(false));
    socket.addEventListener("error", () => store.setConnected(false, "connection error"));
}
function roleScreen(root) {
    root.innerHTML = "";
    const box = document.createElement("div");
    box.className = "role-picker";
    const title = document.createElement("h1");
    title.textContent = "Choose your side of the conversation";
    box.appendChild(title);
    const sessionInput = document.createElement("input");
    sessionInput.value = new URLSearchParams(location.search).get("session") ?? "demo";
    sessionInput.setAttribute("data-testid", "session-input");
    box.appendChild(sessionInput);
    for (const role of ["SME", "FLE"]) {
        const button = document.createElement("button");
        button.textContent =
            role === "SME" ? "Subject Matter Expert (SME)" : "Foreign Language Expert (FLE)";
        button.setAttribute("data-testid", `pick-${role}`);
        button.addEventListener("click", () => start(root, role, sessionInput.value || "demo"));
        box.appendChild(button);
    }
    root.appendChild(box);
}
const rootEl = document.getElementById("app");
if (rootEl)
    roleScreen(rootEl);
