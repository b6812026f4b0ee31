/**
 * Extraction jobs: run a dual encoder over a manifest and write the
 * embedding file. Image roles are L2-normalized; text-channel roles
 * (query_text / passage_text) are written raw, normalization is decided
 * downstream. Row order always equals manifest order.
 */

import { promises as fs } from "node:fs";

import { writeEmbeddings, type EmbeddingFile, type Role } from "./embfile.js";
import { loadEncoder } from "./encoders/registry.js";

const IMAGE_ROLES: ReadonlySet<Role> = new Set(["query_image", "passage_image"]);
const RAW_TEXT_ROLES: ReadonlySet<Role> = new Set(["query_text", "passage_text"]);

export interface ManifestEntry {
  id: string;
  /** image path for image roles, raw text otherwise */
  value: string;
}

export interface ExtractionJob {
  manifest: ManifestEntry[];
  role: Role;
  model: string;
  out: string;
  batchSize?: number;
  limit?: number;
  /** optional prompt template with {} placeholder, applied to text inputs */
  template?: string;
  /** truncate text inputs to this many characters (logged when it fires) */
  maxTextLength?: number;
}

export interface ExtractionResult {
  written: number;
  skipped: string[];
  truncated: string[];
}

/** Two-column manifest: `id<TAB>path-or-text`, one per line. */
export async function readManifest(path: string): Promise<ManifestEntry[]> {
  const text = await fs.readFile(path, "utf-8");
  const entries: ManifestEntry[] = [];
  const seen = new Set<string>();
  text.split("\n").forEach((line, index) => {
    if (line.trim() === "") return;
    const tab = line.indexOf("\t");
    if (tab < 1) throw new Error(`${path}:${index + 1}: expected 'id<TAB>value'`);
    const id = line.slice(0, tab);
    if (seen.has(id)) throw new Error(`${path}:${index + 1}: duplicate id ${JSON.stringify(id)}`);
    seen.add(id);
    entries.push({ id, value: line.slice(tab + 1) });
  });
  return entries;
}

function l2Normalize(vector: Float32Array): Float32Array {
  let norm = 0;
  for (const v of vector) norm += v * v;
  norm = Math.sqrt(norm);
  if (norm === 0) throw new Error("encoder produced a zero vector");
  return Float32Array.from(vector, (v) => v / norm);
}

async function encodeBatch(
  job: ExtractionJob,
  encoder: Awaited<ReturnType<typeof loadEncoder>>,
  entries: ManifestEntry[],
  result: ExtractionResult,
): Promise<Array<{ id: string; vector: Float32Array }>> {
  if (IMAGE_ROLES.has(job.role)) {
    // encode one by one so a single unreadable file only skips itself
    const rows: Array<{ id: string; vector: Float32Array }> = [];
    for (const entry of entries) {
      try {
        const [vector] = await encoder.encodeImages([entry.value]);
        rows.push({ id: entry.id, vector });
      } catch {
        result.skipped.push(entry.id);
      }
    }
    return rows;
  }
  const texts = entries.map((entry) => {
    let text = entry.value;
    if (job.maxTextLength !== undefined && text.length > job.maxTextLength) {
      result.truncated.push(entry.id);
      text = text.slice(0, job.maxTextLength);
    }
    return job.template !== undefined ? job.template.replaceAll("{}", text) : text;
  });
  const vectors = await encoder.encodeTexts(texts);
  return entries.map((entry, i) => ({ id: entry.id, vector: vectors[i] }));
}

export async function extract(job: ExtractionJob): Promise<ExtractionResult> {
  const encoder = await loadEncoder(job.model); // load failure aborts the job
  const limit = job.limit ?? job.manifest.length;
  const manifest = job.manifest.slice(0, limit);
  const batchSize = job.batchSize ?? 64;
  const normalize = !RAW_TEXT_ROLES.has(job.role);

  const result: ExtractionResult = { written: 0, skipped: [], truncated: [] };
  const rows: Array<{ id: string; vector: Float32Array }> = [];
  for (let start = 0; start < manifest.length; start += batchSize) {
    const batch = manifest.slice(start, start + batchSize);
    rows.push(...(await encodeBatch(job, encoder, batch, result)));
  }
  if (rows.length === 0) {
    throw new Error("no embeddable inputs (all manifest entries failed)");
  }

  const data = new Float32Array(rows.length * encoder.dim);
  rows.forEach((row, i) => {
    const vector = normalize ? l2Normalize(row.vector) : row.vector;
    if (vector.length !== encoder.dim) {
      throw new Error(`encoder emitted dim ${vector.length}, expected ${encoder.dim}`);
    }
    data.set(vector, i * encoder.dim);
  });
  const file: EmbeddingFile = {
    ids: rows.map((row) => row.id),
    role: job.role,
    dim: encoder.dim,
    data,
  };
  await writeEmbeddings(file, job.out);
  result.written = rows.length;
  return result;
}
