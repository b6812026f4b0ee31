/**
 * Minimal PPM (P6 binary / P3 ascii) decoder. PPM keeps the smoke path free
 * of native image codecs; real encoders bring their own loaders.
 */

export interface Image {
  width: number;
  height: number;
  /** RGB triples, row-major, 0-255 */
  pixels: Uint8Array;
}

export function decodePpm(buffer: Buffer): Image {
  const magic = buffer.toString("ascii", 0, 2);
  if (magic !== "P6" && magic !== "P3") {
    throw new Error(`not a PPM file (magic ${JSON.stringify(magic)})`);
  }
  // header tokens: magic, width, height, maxval; '#' comments allowed
  let offset = 2;
  const tokens: string[] = [];
  while (tokens.length < 3 && offset < buffer.length) {
    const ch = String.fromCharCode(buffer[offset]);
    if (ch === "#") {
      while (offset < buffer.length && buffer[offset] !== 0x0a) offset++;
      offset++;
    } else if (/\s/.test(ch)) {
      offset++;
    } else {
      let token = "";
      while (offset < buffer.length && !/\s/.test(String.fromCharCode(buffer[offset]))) {
        token += String.fromCharCode(buffer[offset]);
        offset++;
      }
      tokens.push(token);
    }
  }
  const [width, height, maxval] = tokens.map((t) => Number.parseInt(t, 10));
  if (!(width > 0) || !(height > 0) || !(maxval > 0) || maxval > 255) {
    throw new Error(`bad PPM header: ${tokens.join(" ")}`);
  }

  const pixels = new Uint8Array(width * height * 3);
  if (magic === "P6") {
    offset++; // single whitespace after maxval
    if (buffer.length - offset < pixels.length) throw new Error("truncated PPM payload");
    pixels.set(buffer.subarray(offset, offset + pixels.length));
  } else {
    const values = buffer
      .toString("ascii", offset)
      .split(/\s+/)
      .filter((t) => t.length > 0)
      .map((t) => Number.parseInt(t, 10));
    if (values.length < pixels.length) throw new Error("truncated PPM payload");
    pixels.set(values.slice(0, pixels.length));
  }
  return { width, height, pixels };
}

export function encodePpmP6(image: Image): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(image.pixels)]);
}

export function solidColor(width: number, height: number, rgb: [number, number, number]): Image {
  const pixels = new Uint8Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    pixels[3 * i] = rgb[0];
    pixels[3 * i + 1] = rgb[1];
    pixels[3 * i + 2] = rgb[2];
  }
  return { width, height, pixels };
}
