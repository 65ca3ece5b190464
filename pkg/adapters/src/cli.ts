// Usage:
//   node dist/src/cli.js logprobs   --corpus c.jsonl --out lp.jsonl [--backend stub]
//   node dist/src/cli.js probes     --corpus c.jsonl --out rp.jsonl [--prompts file.json] [--k-scores 5]
//   node dist/src/cli.js embeddings --corpus c.jsonl --out emb.jsonl [--dim 8]
//   node dist/src/cli.js gradients  --corpus c.jsonl --out gf.jsonl [--checkpoints 0.1,0.2] [--dim 2] [--val-sets 1]
// Common flags: --format conversation|pair --batch-size 64 --provenance str --limit n
// Outputs are append-safe: rerunning a partial export completes it.

import fs from "fs";
import path from "path";
import { fileURLToPath } from "url";
import {
  exportEmbeddings,
  exportGradientFeatures,
  exportLogprobs,
  exportRatingProbes,
  type ExportJob,
} from "./jobs.js";

function parseArgs(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) throw new Error(`unexpected argument: ${argv[i]}`);
    const key = argv[i].slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) throw new Error(`flag --${key} needs a value`);
    flags.set(key, value);
    i++;
  }
  return flags;
}

function requireFlag(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (!value) throw new Error(`missing required flag --${name}`);
  return value;
}

function baseJob(flags: Map<string, string>): ExportJob {
  const format = (flags.get("format") ?? "conversation") as "conversation" | "pair";
  if (format !== "conversation" && format !== "pair") throw new Error(`bad --format ${format}`);
  return {
    corpus: requireFlag(flags, "corpus"),
    format,
    backend: flags.get("backend") ?? "stub",
    out: requireFlag(flags, "out"),
    batchSize: parseInt(flags.get("batch-size") ?? "64", 10),
    provenance: flags.get("provenance") ?? "",
    limit: flags.has("limit") ? parseInt(flags.get("limit")!, 10) : undefined,
  };
}

function defaultPromptsPath(): string {
  return path.join(path.dirname(fileURLToPath(import.meta.url)), "..", "..", "prompts", "rating_prompts.json");
}

async function main() {
  const [task, ...rest] = process.argv.slice(2);
  const tasks = ["logprobs", "probes", "embeddings", "gradients"];
  if (!task || !tasks.includes(task)) {
    console.error(`usage: cli.js <${tasks.join("|")}> --corpus <path> --out <path> [flags]`);
    process.exit(2);
  }
  const flags = parseArgs(rest);
  const job = baseJob(flags);

  if (task === "logprobs") {
    await exportLogprobs(job);
  } else if (task === "probes") {
    const promptsFile = flags.get("prompts") ?? defaultPromptsPath();
    const promptsConfig = JSON.parse(fs.readFileSync(promptsFile, "utf-8"));
    if (!Array.isArray(promptsConfig.prompts) || promptsConfig.prompts.length < 1) {
      throw new Error(`${promptsFile}: expected {"prompts": [...]}`);
    }
    const provenance = job.provenance ||
      `${job.backend}-backend; prompts=${promptsConfig.provenance ?? promptsFile}`;
    await exportRatingProbes({
      ...job,
      provenance,
      prompts: promptsConfig.prompts,
      kScores: parseInt(flags.get("k-scores") ?? "5", 10),
    });
  } else if (task === "embeddings") {
    await exportEmbeddings({ ...job, dim: parseInt(flags.get("dim") ?? "8", 10) });
  } else {
    const learningRates = (flags.get("checkpoints") ?? "0.1,0.2").split(",").map(Number);
    if (learningRates.some((x) => !(x > 0))) throw new Error("--checkpoints must be positive rates");
    await exportGradientFeatures({
      ...job,
      learningRates,
      dim: parseInt(flags.get("dim") ?? "2", 10),
      valSets: parseInt(flags.get("val-sets") ?? "1", 10),
    });
  }
}

main().catch((err) => {
  console.error(String(err.message ?? err));
  process.exit(1);
});
