#!/usr/bin/env node
/**
 * bridge extract --manifest items.tsv --role query_image --model toy-color \
 *     --out query_image.emb [--batch-size 64] [--limit N] [--template "a photo of {}"]
 *
 * Reads a two-column manifest (id, image path or raw text), runs the chosen
 * dual encoder, and writes a crossfuse embedding file plus id sidecar.
 */

import { parseArgs } from "node:util";

import { ROLE_BYTES, type Role } from "./embfile.js";
import { extract, readManifest } from "./extract.js";

function usage(): never {
  console.error(
    "usage: bridge extract --manifest <tsv> --role <role> --model <id> --out <path>\n" +
      "       [--batch-size N] [--limit N] [--template STR] [--max-text-length N]\n" +
      `roles: ${Object.keys(ROLE_BYTES).join(", ")}`,
  );
  process.exit(2);
}

async function main(): Promise<void> {
  const [command, ...rest] = process.argv.slice(2);
  if (command !== "extract") usage();
  const { values } = parseArgs({
    args: rest,
    options: {
      manifest: { type: "string" },
      role: { type: "string" },
      model: { type: "string" },
      out: { type: "string" },
      "batch-size": { type: "string", default: "64" },
      limit: { type: "string" },
      template: { type: "string" },
      "max-text-length": { type: "string" },
    },
  });
  if (!values.manifest || !values.role || !values.model || !values.out) usage();
  if (!(values.role in ROLE_BYTES)) {
    console.error(`error: unknown role ${JSON.stringify(values.role)}`);
    process.exit(2);
  }

  const manifest = await readManifest(values.manifest);
  const result = await extract({
    manifest,
    role: values.role as Role,
    model: values.model,
    out: values.out,
    batchSize: Number.parseInt(values["batch-size"], 10),
    limit: values.limit !== undefined ? Number.parseInt(values.limit, 10) : undefined,
    template: values.template,
    maxTextLength:
      values["max-text-length"] !== undefined
        ? Number.parseInt(values["max-text-length"], 10)
        : undefined,
  });
  console.log(`wrote ${result.written} x ${values.role} embeddings to ${values.out}`);
  if (result.skipped.length > 0) {
    console.error(`skipped unreadable inputs: ${result.skipped.join(", ")}`);
  }
  if (result.truncated.length > 0) {
    console.error(`truncated long texts: ${result.truncated.join(", ")}`);
  }
}

main().catch((error) => {
  console.error(`error: ${error instanceof Error ? error.message : error}`);
  process.exit(1);
});
