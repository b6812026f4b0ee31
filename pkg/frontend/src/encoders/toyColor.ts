/**
 * Deterministic reference dual encoder for offline smoke runs.
 *
 * Images and texts meet in one 8-d feature space derived from RGB
 * statistics: images contribute their mean pixel color, texts the canonical
 * color of any color word they contain. Texts without a color word fall
 * back to a hashed character-trigram direction, so every input still gets a
 * valid, reproducible embedding (just not a semantically aligned one).
 * No weights, no network: the smoke acceptance set is built to align.
 */

import { promises as fs } from "node:fs";
import { createHash } from "node:crypto";

import { decodePpm } from "../ppm.js";
import type { DualEncoder } from "./types.js";

const DIM = 8;

const COLOR_LEXICON: Record<string, [number, number, number]> = {
  red: [220, 50, 47],
  green: [70, 160, 70],
  blue: [50, 90, 220],
  yellow: [230, 220, 60],
  orange: [235, 140, 40],
  purple: [130, 60, 180],
  pink: [240, 140, 190],
  brown: [130, 90, 50],
  black: [15, 15, 15],
  white: [245, 245, 245],
  gray: [128, 128, 128],
  grey: [128, 128, 128],
  cyan: [60, 200, 210],
  magenta: [210, 60, 190],
  teal: [40, 130, 130],
  navy: [25, 35, 100],
};

function featuresFromRgb(r: number, g: number, b: number): Float32Array {
  const rn = r / 255;
  const gn = g / 255;
  const bn = b / 255;
  const brightness = (rn + gn + bn) / 3;
  const spread = Math.max(rn, gn, bn) - Math.min(rn, gn, bn);
  return Float32Array.from([rn, gn, bn, brightness, rn - gn, bn - (rn + gn) / 2, spread, 0.5]);
}

function hashedDirection(text: string): Float32Array {
  const out = new Float32Array(DIM);
  const normalized = text.toLowerCase();
  for (let i = 0; i < normalized.length - 2; i++) {
    const digest = createHash("sha256").update(normalized.slice(i, i + 3)).digest();
    for (let d = 0; d < DIM; d++) out[d] += (digest[d] / 127.5 - 1) / 8;
  }
  return out;
}

export class ToyColorEncoder implements DualEncoder {
  readonly id = "toy-color";
  readonly dim = DIM;

  async encodeImages(paths: string[]): Promise<Float32Array[]> {
    const out: Float32Array[] = [];
    for (const path of paths) {
      const image = decodePpm(await fs.readFile(path));
      let r = 0;
      let g = 0;
      let b = 0;
      const n = image.width * image.height;
      for (let i = 0; i < n; i++) {
        r += image.pixels[3 * i];
        g += image.pixels[3 * i + 1];
        b += image.pixels[3 * i + 2];
      }
      out.push(featuresFromRgb(r / n, g / n, b / n));
    }
    return out;
  }

  async encodeTexts(texts: string[]): Promise<Float32Array[]> {
    return texts.map((text) => {
      const words = text.toLowerCase().split(/[^a-z]+/);
      const hits = words.filter((w) => w in COLOR_LEXICON);
      if (hits.length === 0) return hashedDirection(text);
      const mixed = [0, 0, 0];
      for (const word of hits) {
        const [r, g, b] = COLOR_LEXICON[word];
        mixed[0] += r / hits.length;
        mixed[1] += g / hits.length;
        mixed[2] += b / hits.length;
      }
      return featuresFromRgb(mixed[0], mixed[1], mixed[2]);
    });
  }
}
