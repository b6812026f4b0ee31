/** A dual encoder embeds images and texts into one shared vector space. */
export interface DualEncoder {
  readonly id: string;
  readonly dim: number;
  /** Embed a batch of image files; one vector per path. */
  encodeImages(paths: string[]): Promise<Float32Array[]>;
  /** Embed a batch of raw texts; one vector per string. */
  encodeTexts(texts: string[]): Promise<Float32Array[]>;
}
