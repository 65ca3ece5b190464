// Writers for the engine's text score-file formats, with id-level
// checkpointing: rows append under a header written once, and a resumed job
// skips every id already present, so interrupted exports converge to the
// same file contents as a fresh run.

import fs from "fs";

export interface ResumeState {
  exists: boolean;
  doneIds: Set<string>;
}

export function inspectOutput(path: string, expectHeader: Record<string, unknown>): ResumeState {
  if (!fs.existsSync(path)) return { exists: false, doneIds: new Set() };
  const lines = fs.readFileSync(path, "utf-8").split("\n").filter(Boolean);
  if (!lines.length) return { exists: false, doneIds: new Set() };
  const header = JSON.parse(lines[0]);
  for (const [key, value] of Object.entries(expectHeader)) {
    if (JSON.stringify(header[key]) !== JSON.stringify(value)) {
      throw new Error(
        `${path}: existing header ${key}=${JSON.stringify(header[key])} does not match ` +
        `this job (${JSON.stringify(value)}); refusing to mix outputs`);
    }
  }
  const doneIds = new Set<string>();
  for (const line of lines.slice(1)) {
    try {
      const row = JSON.parse(line);
      if (typeof row.id === "string") doneIds.add(row.id);
    } catch {
      throw new Error(`${path}: truncated or corrupt row; delete the file and rerun`);
    }
  }
  return { exists: true, doneIds };
}

export class RowWriter {
  private fd: number;
  readonly skipped: Set<string>;
  written = 0;

  constructor(path: string, header: Record<string, unknown>) {
    const state = inspectOutput(path, header);
    this.skipped = state.doneIds;
    this.fd = fs.openSync(path, "a");
    if (!state.exists) {
      fs.writeSync(this.fd, JSON.stringify({ ...header, version: 1 }) + "\n");
    }
  }

  wants(id: string): boolean {
    return !this.skipped.has(id);
  }

  writeRow(row: Record<string, unknown>) {
    fs.writeSync(this.fd, JSON.stringify(row) + "\n");
    this.written += 1;
  }

  close() {
    fs.fsyncSync(this.fd);
    fs.closeSync(this.fd);
  }
}

export const headers = {
  logprobs: (provenance: string) => ({ format: "logprobs", provenance }),
  probes: (provenance: string, kPrompts: number, kScores: number) => ({
    format: "rating_probes",
    provenance,
    k_prompts: kPrompts,
    k_scores: kScores,
    values: "probabilities",
  }),
  embeddings: (provenance: string, dim: number) => ({
    format: "embeddings",
    provenance,
    dim,
  }),
  gradients: (provenance: string, dim: number, learningRates: number[], validationSets: Record<string, number[][]>) => ({
    format: "gradient_features",
    provenance,
    dim,
    learning_rates: learningRates,
    validation_sets: validationSets,
  }),
};
