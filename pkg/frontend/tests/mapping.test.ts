import { describe, expect, it } from "vitest";
import { canvasToDomain, domainToCanvas, type CanvasSize, type Point } from "../src/mapping.js";

const SIZE: CanvasSize = { width: 640, height: 640 };

describe("canvas/domain mapping", () => {
  it("round trips well under half a pixel", () => {
    let worst = 0;
    for (let i = 0; i < 500; i++) {
      const px: Point = [Math.random() * 639, Math.random() * 639];
      const back = domainToCanvas(canvasToDomain(px, SIZE), SIZE);
      worst = Math.max(worst, Math.abs(back[0] - px[0]), Math.abs(back[1] - px[1]));
    }
    expect(worst).toBeLessThan(0.5);
    expect(worst).toBeLessThan(1e-9);
  });

  it("maps corners to the unit square with y flipped", () => {
    expect(canvasToDomain([0, 639], SIZE)).toEqual([0, 0]);
    expect(canvasToDomain([639, 0], SIZE)).toEqual([1, 1]);
  });

  it("is the exact inverse in the other direction too", () => {
    for (let i = 0; i < 200; i++) {
      const p: Point = [Math.random(), Math.random()];
      const back = canvasToDomain(domainToCanvas(p, SIZE), SIZE);
      expect(Math.abs(back[0] - p[0])).toBeLessThan(1e-12);
      expect(Math.abs(back[1] - p[1])).toBeLessThan(1e-12);
    }
  });
});
