// The studio's stroke pipeline (canvas -> domain -> fit) must produce the
// same sketch parameters the engine computes; the fixture carries the
// engine's answers for recorded strokes.
import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { strokeToDomain, type CanvasSize, type Point } from "../src/mapping.js";
import { fitSketch, type FittedOval, type FittedArrow } from "../src/sketchfit.js";

interface StrokeFixture {
  name: string;
  canvas: Point[];
  expected_domain: Point[];
  fitted: Record<string, unknown>;
}

const fixture = JSON.parse(
  readFileSync(new URL("./fixtures/strokes.json", import.meta.url), "utf-8"));
const SIZE: CanvasSize = fixture.canvas_size;
const strokes: StrokeFixture[] = fixture.strokes;

describe("stroke fitting matches the engine", () => {
  for (const stroke of strokes) {
    it(`${stroke.name}: mapping matches to 1e-9`, () => {
      const domain = strokeToDomain(stroke.canvas, SIZE);
      domain.forEach((p, i) => {
        expect(Math.abs(p[0] - stroke.expected_domain[i][0])).toBeLessThan(1e-9);
        expect(Math.abs(p[1] - stroke.expected_domain[i][1])).toBeLessThan(1e-9);
      });
    });

    it(`${stroke.name}: fitted parameters match to 1e-6`, () => {
      const fitted = fitSketch(strokeToDomain(stroke.canvas, SIZE));
      expect(fitted.kind).toBe(stroke.fitted.kind);
      if (fitted.kind === "oval") {
        const expected = stroke.fitted as { center: Point; semi_axes: Point };
        const oval = fitted as FittedOval;
        for (const axis of [0, 1]) {
          expect(Math.abs(oval.center[axis] - expected.center[axis])).toBeLessThan(1e-6);
          expect(Math.abs(oval.semi_axes[axis] - expected.semi_axes[axis])).toBeLessThan(1e-6);
        }
      } else {
        const expected = stroke.fitted as { start: Point; end: Point };
        const arrow = fitted as FittedArrow;
        for (const axis of [0, 1]) {
          expect(Math.abs(arrow.start[axis] - expected.start[axis])).toBeLessThan(1e-6);
          expect(Math.abs(arrow.end[axis] - expected.end[axis])).toBeLessThan(1e-6);
        }
      }
    });
  }

  it("rejects strokes shorter than three points", () => {
    expect(() => fitSketch([[0.1, 0.1], [0.2, 0.2]])).toThrow();
  });
});
