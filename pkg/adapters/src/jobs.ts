// Export jobs: one per score-file kind. Batch loops are async so a real
// model backend can slot in behind the Backend interface; the stub resolves
// synchronously.

import { readCorpus, type CorpusRecord } from "./corpus.js";
import { headers, RowWriter } from "./formats.js";
import { makeBackend, type Backend } from "./stub.js";

export interface ExportJob {
  corpus: string;
  format: "conversation" | "pair";
  backend: string;
  out: string;
  batchSize: number;
  provenance: string;
  limit?: number;
}

function loadRecords(job: ExportJob): CorpusRecord[] {
  const records = readCorpus(job.corpus, job.format);
  return job.limit ? records.slice(0, job.limit) : records;
}

async function runBatches(
  records: CorpusRecord[],
  writer: RowWriter,
  batchSize: number,
  emit: (record: CorpusRecord) => Record<string, unknown>,
) {
  const pending = records.filter((r) => writer.wants(r.id));
  for (let i = 0; i < pending.length; i += batchSize) {
    const batch = pending.slice(i, i + batchSize);
    const rows = await Promise.all(batch.map(async (record) => emit(record)));
    for (const row of rows) writer.writeRow(row);
  }
  writer.close();
  console.log(`wrote ${writer.written} rows (${writer.skipped.size} already present)`);
}

export async function exportLogprobs(job: ExportJob): Promise<void> {
  const backend = makeBackend(job.backend);
  const records = loadRecords(job);
  const writer = new RowWriter(job.out, headers.logprobs(provenanceOf(job, backend)));
  await runBatches(records, writer, job.batchSize, (record) => {
    const { conditioned, unconditioned } = backend.logprobs(record);
    return { id: record.id, conditioned, unconditioned };
  });
}

export interface ProbeJob extends ExportJob {
  prompts: string[];
  kScores: number;
}

export async function exportRatingProbes(job: ProbeJob): Promise<void> {
  const backend = makeBackend(job.backend);
  const records = loadRecords(job);
  const writer = new RowWriter(
    job.out,
    headers.probes(provenanceOf(job, backend), job.prompts.length, job.kScores),
  );
  await runBatches(records, writer, job.batchSize, (record) => ({
    id: record.id,
    probe: job.prompts.map((_, p) => backend.probeRow(record, p, job.kScores)),
  }));
}

export interface EmbeddingJob extends ExportJob {
  dim: number;
}

export async function exportEmbeddings(job: EmbeddingJob): Promise<void> {
  const backend = makeBackend(job.backend);
  const records = loadRecords(job);
  const writer = new RowWriter(job.out, headers.embeddings(provenanceOf(job, backend), job.dim));
  await runBatches(records, writer, job.batchSize, (record) => ({
    id: record.id,
    vector: backend.embedding(record, job.dim),
  }));
}

export interface GradientJob extends ExportJob {
  learningRates: number[];
  dim: number;
  valSets: number;
}

export async function exportGradientFeatures(job: GradientJob): Promise<void> {
  const backend = makeBackend(job.backend);
  const records = loadRecords(job);
  const nCkpt = job.learningRates.length;
  const validationSets: Record<string, number[][]> = {};
  for (let j = 0; j < job.valSets; j++) {
    validationSets[`val${j}`] = backend.validationGradient(j, nCkpt, job.dim);
  }
  const writer = new RowWriter(
    job.out,
    headers.gradients(provenanceOf(job, backend), job.dim, job.learningRates, validationSets),
  );
  await runBatches(records, writer, job.batchSize, (record) => ({
    id: record.id,
    grads: backend.gradients(record, nCkpt, job.dim),
  }));
}

function provenanceOf(job: ExportJob, backend: Backend): string {
  return job.provenance || `${backend.name}-backend`;
}
