import { describe, expect, it } from "vitest";
import { clampFactor, previewBrightness, previewByte } from "./brightness";

/** Server-side semantics: byte -> float32 unit sample -> scale -> round. */
function serverByte(byte: number, factor: number): number {
  const sample = Math.fround(byte / 255);
  const scaled = Math.min(Math.max(sample * factor, 0), 1);
  return Math.floor(scaled * 255 + 0.5);
}

describe("brightness preview", () => {
  it("factor 1.0 is pixel-identical", () => {
    const data = new Uint8ClampedArray([0, 10, 128, 255, 33, 99, 200, 255]);
    expect(Array.from(previewBrightness(data, 1.0))).toEqual(Array.from(data));
  });

  it("matches the server within one byte for every value and factor", () => {
    // acceptance: preview within +/-1/255 of the server result
    for (const factor of [0.12, 0.37, 0.55, 0.9, 1.0]) {
      let worst = 0;
      for (let byte = 0; byte < 256; byte++) {
        const diff = Math.abs(previewByte(byte, factor) - serverByte(byte, factor));
        worst = Math.max(worst, diff);
      }
      expect(worst).toBeLessThanOrEqual(1);
    }
  });

  it("alpha channel is untouched", () => {
    const data = new Uint8ClampedArray([100, 100, 100, 77]);
    const out = previewBrightness(data, 0.5);
    expect(out[3]).toBe(77);
    expect(out[0]).toBe(50);
  });

  it("rejects factors outside (0, 1]", () => {
    const data = new Uint8ClampedArray(4);
    expect(() => previewBrightness(data, 0)).toThrow();
    expect(() => previewBrightness(data, 1.5)).toThrow();
  });

  it("slider values clamp into the legal range", () => {
    expect(clampFactor(-2)).toBeGreaterThan(0);
    expect(clampFactor(0.37)).toBe(0.37);
    expect(clampFactor(3)).toBe(1.0);
  });
});
