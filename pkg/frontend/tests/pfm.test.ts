import { describe, expect, it } from "vitest";

import { decodePfm, encodePfm, scalePfm, tonemapToRgba } from "../src/pfm.js";

function probe(width: number, height: number): Float32Array {
  const data = new Float32Array(width * height * 3);
  for (let i = 0; i < data.length; i++) data[i] = (i % 17) * 0.25;
  return data;
}

describe("pfm codec", () => {
  it("round-trips encode -> decode", () => {
    const img = { width: 8, height: 4, data: probe(8, 4) };
    const out = decodePfm(encodePfm(img));
    expect(out.width).toBe(8);
    expect(out.height).toBe(4);
    expect(Array.from(out.data)).toEqual(Array.from(img.data));
  });

  it("flips bottom-first storage to top-down rows", () => {
    // 1x2 image: top row red, bottom row green
    const img = { width: 1, height: 2, data: new Float32Array([1, 0, 0, 0, 1, 0]) };
    const bytes = new Uint8Array(encodePfm(img));
    const header = new TextEncoder().encode("PF\n1 2\n-1.0\n");
    const view = new DataView(bytes.buffer, header.length);
    // stored payload starts with the bottom row (green)
    expect(view.getFloat32(0, true)).toBe(0);
    expect(view.getFloat32(4, true)).toBe(1);
    const back = decodePfm(bytes.buffer);
    expect(back.data[0]).toBe(1); // top row red again
  });

  it("accepts the service's header format", () => {
    const payload = new Float32Array(32 * 16 * 3).fill(0.5);
    const header = new TextEncoder().encode("PF\n32 16\n-1.0\n");
    const buf = new Uint8Array(header.length + payload.byteLength);
    buf.set(header, 0);
    buf.set(new Uint8Array(payload.buffer), header.length);
    const img = decodePfm(buf.buffer);
    expect(img.width).toBe(32);
    expect(img.height).toBe(16);
    expect(img.data[0]).toBe(0.5);
  });

  it("rejects wrong magic, bad dims, and truncated payloads", () => {
    const ok = new Uint8Array(encodePfm({ width: 2, height: 2, data: probe(2, 2) }));
    const wrongMagic = ok.slice();
    wrongMagic[1] = "f".charCodeAt(0);
    expect(() => decodePfm(wrongMagic.buffer)).toThrow(/kind/);
    expect(() => decodePfm(ok.slice(0, ok.length - 4).buffer)).toThrow(/truncated/);
    const badDims = new TextEncoder().encode("PF\n0 2\n-1.0\n");
    expect(() => decodePfm(badDims.buffer)).toThrow(/dimensions/);
  });

  it("scales values linearly", () => {
    const img = { width: 2, height: 1, data: new Float32Array([1, 2, 3, 4, 5, 6]) };
    const doubled = scalePfm(img, 2);
    expect(Array.from(doubled.data)).toEqual([2, 4, 6, 8, 10, 12]);
    expect(Array.from(img.data)).toEqual([1, 2, 3, 4, 5, 6]); // original untouched
  });

  it("tonemaps into opaque RGBA bytes", () => {
    const img = { width: 2, height: 1, data: new Float32Array([0, 0, 0, 100, 100, 100]) };
    const rgba = tonemapToRgba(img);
    expect(rgba.length).toBe(8);
    expect(rgba[0]).toBe(0);
    expect(rgba[3]).toBe(255);
    expect(rgba[4]).toBeGreaterThan(240); // bright pixel maps near white
  });
});
