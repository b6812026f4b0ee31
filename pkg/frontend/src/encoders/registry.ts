/**
 * Encoders are looked up by model-identifier string so swapping ViT/ResNet
 * style variants needs no code changes. The built-in "toy-color" encoder is
 * the only one usable without downloadable weights; pretrained dual
 * encoders (e.g. transformers.js CLIP checkpoints) register here the same
 * way once their weights are available locally.
 */

import type { DualEncoder } from "./types.js";
import { ToyColorEncoder } from "./toyColor.js";

type EncoderFactory = () => Promise<DualEncoder>;

const FACTORIES = new Map<string, EncoderFactory>([
  ["toy-color", async () => new ToyColorEncoder()],
]);

export function registerEncoder(id: string, factory: EncoderFactory): void {
  FACTORIES.set(id, factory);
}

export async function loadEncoder(id: string): Promise<DualEncoder> {
  const factory = FACTORIES.get(id);
  if (factory === undefined) {
    const known = [...FACTORIES.keys()].sort().join(", ");
    throw new Error(`unknown model identifier ${JSON.stringify(id)} (available: ${known})`);
  }
  return factory();
}
