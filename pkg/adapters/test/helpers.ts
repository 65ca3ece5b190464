import fs from "fs";
import os from "os";
import path from "path";
import { spawnSync } from "child_process";

export function tempDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "sift-adapters-"));
}

export function writeCorpus(dir: string, n: number, sources = ["blobA", "blobB"]): string {
  const lines: string[] = [];
  for (let i = 0; i < n; i++) {
    lines.push(JSON.stringify({
      source: sources[i % sources.length],
      conversations: [
        { from: "human", value: `question number ${i} about topic ${i % 7}` },
        { from: "gpt", value: `answer text ${i} with some padding words for realism` },
      ],
    }));
  }
  const file = path.join(dir, "corpus.jsonl");
  fs.writeFileSync(file, lines.join("\n") + "\n");
  return file;
}

export interface EngineResult {
  status: number;
  stdout: string;
  stderr: string;
}

/** Run the engine CLI (the primary component's external interface). */
export function sift(...args: string[]): EngineResult {
  const proc = spawnSync("python3", ["-m", "sift", ...args], { encoding: "utf-8" });
  return { status: proc.status ?? -1, stdout: proc.stdout, stderr: proc.stderr };
}

export function adapterCli(...args: string[]): EngineResult {
  const entry = path.join(path.dirname(new URL(import.meta.url).pathname), "..", "src", "cli.js");
  const proc = spawnSync(process.execPath, [entry, ...args], { encoding: "utf-8" });
  return { status: proc.status ?? -1, stdout: proc.stdout, stderr: proc.stderr };
}

export function readScoreTable(file: string): Map<string, number> {
  const lines = fs.readFileSync(file, "utf-8").split("\n").filter(Boolean);
  const out = new Map<string, number>();
  for (const line of lines.slice(1)) {
    const row = JSON.parse(line);
    out.set(row.id, row.score);
  }
  return out;
}
