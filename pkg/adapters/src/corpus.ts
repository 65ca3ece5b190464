// Corpus reader mirroring the engine's line schemas and content-derived ids.

import fs from "fs";
import { blake2b } from "./blake2b.js";

export type Role = "user" | "assistant";

export interface CorpusRecord {
  id: string; // 16-hex-digit content hash, identical to the engine's
  source: string;
  turns: Array<[Role, string]>;
  instruction: string;
  response: string;
}

const ROLE_BYTE: Record<Role, number> = { user: 0, assistant: 1 };

export function canonicalBytes(turns: Array<[Role, string]>): Buffer {
  const parts: Buffer[] = [];
  for (const [role, text] of turns) {
    const raw = Buffer.from(text, "utf-8");
    const head = Buffer.alloc(9);
    head.writeUInt8(ROLE_BYTE[role], 0);
    head.writeBigUInt64LE(BigInt(raw.length), 1);
    parts.push(head, raw);
  }
  return Buffer.concat(parts);
}

export function recordId(turns: Array<[Role, string]>): string {
  return blake2b(canonicalBytes(turns), 8).toString("hex");
}

function joinRole(turns: Array<[Role, string]>, role: Role): string {
  return turns.filter(([r]) => r === role).map(([r, t]) => `${r}: ${t}`).join("\n");
}

export function readCorpus(path: string, format: "conversation" | "pair" = "conversation"): CorpusRecord[] {
  const lines = fs.readFileSync(path, "utf-8").split("\n").filter(Boolean);
  const records: CorpusRecord[] = [];
  for (const line of lines) {
    let obj: any;
    try {
      obj = JSON.parse(line);
    } catch {
      continue; // malformed lines are the engine's problem to count; skip here
    }
    let turns: Array<[Role, string]>;
    if (format === "conversation") {
      if (!Array.isArray(obj.conversations)) continue;
      turns = obj.conversations
        .filter((t: any) => (t.from === "human" || t.from === "gpt") && typeof t.value === "string")
        .map((t: any) => [t.from === "human" ? "user" : "assistant", t.value] as [Role, string]);
    } else {
      if (typeof obj.instruction !== "string" || typeof obj.output !== "string") continue;
      turns = [["user", obj.instruction], ["assistant", obj.output]];
    }
    if (!turns.length || !turns.some(([r]) => r === "assistant")) continue;
    records.push({
      id: recordId(turns),
      source: typeof obj.source === "string" ? obj.source : "",
      turns,
      instruction: joinRole(turns, "user"),
      response: joinRole(turns, "assistant"),
    });
  }
  return records;
}
