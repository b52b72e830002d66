/**
 * Wire protocol v1: canonical JSON text frames.
 *
 * Mirrors the engine's codec: top-level field order is
 * type, session_id, turn_id, identity, seq, body; body keys are sorted;
 * seq increases strictly per connection.
 */
export const PROTOCOL_VERSION = 1;
export const FRAME_TYPES = [
    "hello",
    "speech",
    "transcript",
    "translation",
    "correction_prompt",
    "choice",
    "deliver",
    "error",
    "ack",
];
export class ProtocolError extends Error {
}
export function otherRole(role) {
    return role === "SME" ? "FLE" : "SME";
}
function sortedBody(value) {
    if (Array.isArray(value)) {
        return value.map(sortedBody);
    }
    if (value !== null && typeof value === "object") {
        const out = {};
        for (const key of Object.keys(value).sort()) {
            out[key] = sortedBody(value[key]);
        }
        return out;
    }
    return value;
}
export function encodeFrame(frame) {
    if (!Number.isInteger(frame.seq) || frame.seq < 1) {
        throw new ProtocolError(`seq must be a positive integer, got ${frame.seq}`);
    }
    const out = {
        type: frame.type,
        session_id: frame.session_id,
    };
    if (frame.turn_id !== undefined)
        out.turn_id = frame.turn_id;
    if (frame.identity !== undefined)
        out.identity = frame.identity;
    out.seq = frame.seq;
    out.body = sortedBody(frame.body ?? {});
    return JSON.stringify(out);
}
export function decodeFrame(data) {
    let obj;
    try {
        obj = JSON.parse(data);
    }
    catch (err) {
        throw new ProtocolError(`not a JSON text frame: ${String(err)}`);
    }
    if (obj === null || typeof obj !== "object" || Array.isArray(obj)) {
        throw new ProtocolError("frame must be a JSON object");
    }
    const record = obj;
    const known = new Set(["type", "session_id", "turn_id", "identity", "seq", "body"]);
    for (const key of Object.keys(record)) {
        if (!known.has(key))
            throw new ProtocolError(`unknown frame field: ${key}`);
    }
    const type = record.type;
    if (typeof type !== "string" || !FRAME_TYPES.includes(type)) {
        throw new ProtocolError(`missing or unknown frame type: ${String(type)}`);
    }
    const sessionId = record.session_id;
    if (typeof sessionId !== "string" || sessionId.length === 0) {
        throw new ProtocolError("session_id must be a non-empty string");
    }
    const seq = record.seq;
    if (typeof seq !== "number" || !Number.isInteger(seq) || seq < 1) {
        throw new ProtocolError(`seq must be a positive integer, got ${String(seq)}`);
    }
    const turnId = record.turn_id;
    if (turnId !== undefined && typeof turnId !== "string") {
        throw new ProtocolError("turn_id must be a string when present");
    }
    let identity;
    if (record.identity !== undefined) {
        if (record.identity !== "SME" && record.identity !== "FLE") {
            throw new ProtocolError(`unknown identity: ${String(record.identity)}`);
        }
        identity = record.identity;
    }
    const body = record.body ?? {};
    if (body === null || typeof body !== "object" || Array.isArray(body)) {
        throw new ProtocolError("body must be a JSON object");
    }
    if (type === "speech" && identity === undefined) {
        throw new ProtocolError("speech frames must carry an identity token");
    }
    if (type === "correction_prompt") {
        const b = body;
        for (const key of ["translation", "remediation", "justification"]) {
            if (typeof b[key] !== "string" || b[key].length === 0) {
                throw new ProtocolError(`correction_prompt must carry a non-empty ${key}`);
            }
        }
    }
    return {
        type: type,
        session_id: sessionId,
        turn_id: turnId,
        identity,
        seq,
        body: body,
    };
}
export function helloFrame(sessionId, role, seq) {
    return {
        type: "hello",
        session_id: sessionId,
        identity: role,
        seq,
        body: { v: PROTOCOL_VERSION },
    };
}
