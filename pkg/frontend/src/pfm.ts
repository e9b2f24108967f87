/** Minimal PFM (portable float map) codec for probe images.
 *
 * The service exchanges probes as little-endian color PFM: header lines
 * "PF", "<width> <height>", "-1.0", then h*w*3 float32 values bottom row
 * first. Decoded data here is top-down row-major RGB.
 */

export interface PfmImage {
  width: number;
  height: number;
  data: Float32Array; // top-down, row-major, 3 channels
}

function readLine(bytes: Uint8Array, pos: number): [string, number] {
  let end = pos;
  while (end < bytes.length && bytes[end] !== 0x0a) end++;
  if (end >= bytes.length) throw new Error("truncated PFM header");
  return [new TextDecoder().decode(bytes.subarray(pos, end)).trim(), end + 1];
}

export function decodePfm(buffer: ArrayBuffer): PfmImage {
  const bytes = new Uint8Array(buffer);
  let pos = 0;
  let kind: string, dims: string, scaleLine: string;
  [kind, pos] = readLine(bytes, pos);
  if (kind !== "PF") throw new Error(`unsupported PFM kind ${kind}`);
  [dims, pos] = readLine(bytes, pos);
  const [width, height] = dims.split(/\s+/).map(Number);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new Error(`bad PFM dimensions ${dims}`);
  }
  [scaleLine, pos] = readLine(bytes, pos);
  const scale = Number(scaleLine);
  if (!Number.isFinite(scale) || scale === 0) throw new Error(`bad PFM scale ${scaleLine}`);
  const littleEndian = scale < 0;
  const count = width * height * 3;
  if (bytes.length - pos < 4 * count) throw new Error("truncated PFM payload");
  const view = new DataView(buffer, pos);
  const data = new Float32Array(count);
  // PFM stores the bottom row first; flip to top-down while reading
  for (let row = 0; row < height; row++) {
    const src = (height - 1 - row) * width * 3;
    const dst = row * width * 3;
    for (let i = 0; i < width * 3; i++) {
      data[dst + i] = view.getFloat32(4 * (src + i), littleEndian);
    }
  }
  return { width, height, data };
}

export function encodePfm(img: PfmImage): ArrayBuffer {
  const header = new TextEncoder().encode(`PF\n${img.width} ${img.height}\n-1.0\n`);
  const out = new Uint8Array(header.length + 4 * img.data.length);
  out.set(header, 0);
  const view = new DataView(out.buffer, header.length);
  for (let row = 0; row < img.height; row++) {
    const src = row * img.width * 3;
    const dst = (img.height - 1 - row) * img.width * 3;
    for (let i = 0; i < img.width * 3; i++) {
      view.setFloat32(4 * (dst + i), img.data[src + i], true);
    }
  }
  return out.buffer;
}

export function scalePfm(img: PfmImage, factor: number): PfmImage {
  const data = new Float32Array(img.data.length);
  for (let i = 0; i < data.length; i++) data[i] = img.data[i] * factor;
  return { width: img.width, height: img.height, data };
}

/** Reinhard tonemap + gamma for thumbnails; returns RGBA bytes. */
export function tonemapToRgba(img: PfmImage): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(img.width * img.height * 4));
  for (let p = 0; p < img.width * img.height; p++) {
    for (let c = 0; c < 3; c++) {
      const v = Math.max(img.data[3 * p + c], 0);
      out[4 * p + c] = Math.round(255 * Math.pow(v / (1 + v), 1 / 2.2));
    }
    out[4 * p + 3] = 255;
  }
  return out;
}
