/**
 * Writer/reader for the crossfuse embedding container.
 *
 * Layout (little-endian): "EMB1" magic, role byte, dtype byte (0 = float32),
 * u32 dim, u64 count, then count*dim float32 row-major. Ids live in a
 * `<path>.ids` sidecar, one per line, same order as the rows.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

export const MAGIC = "EMB1";
export const DTYPE_FLOAT32 = 0;
const HEADER_SIZE = 4 + 1 + 1 + 4 + 8;

export type Role =
  | "query_image"
  | "passage_image"
  | "entity_name"
  | "query_text"
  | "passage_text";

export const ROLE_BYTES: Record<Role, number> = {
  query_image: 0,
  passage_image: 1,
  entity_name: 2,
  query_text: 3,
  passage_text: 4,
};

const BYTE_ROLES = new Map(Object.entries(ROLE_BYTES).map(([role, byte]) => [byte, role as Role]));

export interface EmbeddingFile {
  ids: string[];
  role: Role;
  dim: number;
  /** row-major, ids.length * dim values */
  data: Float32Array;
}

export function encodeEmbeddings(file: EmbeddingFile): Buffer {
  const { ids, role, dim, data } = file;
  if (ids.length === 0) throw new Error("refusing to write an empty embedding file");
  if (dim < 1) throw new Error(`dim must be >= 1, got ${dim}`);
  if (data.length !== ids.length * dim) {
    throw new Error(`payload has ${data.length} floats, expected ${ids.length * dim}`);
  }
  if (new Set(ids).size !== ids.length) throw new Error("duplicate ids");
  for (const id of ids) {
    if (id === "" || id.includes("\n")) throw new Error(`bad id ${JSON.stringify(id)}`);
  }
  for (const v of data) {
    if (!Number.isFinite(v)) throw new Error("payload contains NaN or Inf");
  }

  const buffer = Buffer.alloc(HEADER_SIZE + 4 * data.length);
  buffer.write(MAGIC, 0, "ascii");
  buffer.writeUInt8(ROLE_BYTES[role], 4);
  buffer.writeUInt8(DTYPE_FLOAT32, 5);
  buffer.writeUInt32LE(dim, 6);
  buffer.writeBigUInt64LE(BigInt(ids.length), 10);
  for (let i = 0; i < data.length; i++) {
    buffer.writeFloatLE(data[i], HEADER_SIZE + 4 * i);
  }
  return buffer;
}

/** Write matrix + id sidecar atomically (temp file then rename). */
export async function writeEmbeddings(file: EmbeddingFile, outPath: string): Promise<void> {
  const payload = encodeEmbeddings(file);
  const sidecar = file.ids.join("\n");
  const tmp = path.join(path.dirname(outPath), `.${path.basename(outPath)}.tmp`);
  await fs.writeFile(tmp, payload);
  await fs.rename(tmp, outPath);
  const tmpIds = `${tmp}.ids`;
  await fs.writeFile(tmpIds, sidecar, "utf-8");
  await fs.rename(tmpIds, `${outPath}.ids`);
}

export async function readEmbeddings(filePath: string): Promise<EmbeddingFile> {
  const blob = await fs.readFile(filePath);
  if (blob.length < HEADER_SIZE) throw new Error(`${filePath}: shorter than header`);
  if (blob.toString("ascii", 0, 4) !== MAGIC) throw new Error(`${filePath}: bad magic`);
  const roleByte = blob.readUInt8(4);
  const role = BYTE_ROLES.get(roleByte);
  if (role === undefined) throw new Error(`${filePath}: unknown role byte ${roleByte}`);
  if (blob.readUInt8(5) !== DTYPE_FLOAT32) throw new Error(`${filePath}: unsupported dtype`);
  const dim = blob.readUInt32LE(6);
  const count = Number(blob.readBigUInt64LE(10));
  const expected = HEADER_SIZE + 4 * dim * count;
  if (blob.length !== expected) {
    throw new Error(`${filePath}: expected ${expected} bytes, got ${blob.length}`);
  }
  const data = new Float32Array(count * dim);
  for (let i = 0; i < data.length; i++) {
    data[i] = blob.readFloatLE(HEADER_SIZE + 4 * i);
    if (!Number.isFinite(data[i])) throw new Error(`${filePath}: payload contains NaN or Inf`);
  }
  const sidecar = await fs.readFile(`${filePath}.ids`, "utf-8");
  const ids = sidecar.split("\n").filter((line, i, all) => !(line === "" && i === all.length - 1));
  if (ids.length !== count) {
    throw new Error(`${filePath}.ids: ${ids.length} ids but header declares ${count}`);
  }
  return { ids, role, dim, data };
}

export function getRow(file: EmbeddingFile, index: number): Float32Array {
  return file.data.subarray(index * file.dim, (index + 1) * file.dim);
}

export function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}
