// Canvas <-> domain coordinate mapping.  The simulation domain is the unit
// square with y up; the canvas has y down.  The two functions are exact
// inverses, so a stroke point survives a round trip to well under half a
// pixel.

export interface CanvasSize {
  width: number;
  height: number;
}

export type Point = [number, number];

export function canvasToDomain(px: Point, size: CanvasSize): Point {
  const x = px[0] / (size.width - 1);
  const y = 1 - px[1] / (size.height - 1);
  return [x, y];
}

export function domainToCanvas(p: Point, size: CanvasSize): Point {
  const col = p[0] * (size.width - 1);
  const row = (1 - p[1]) * (size.height - 1);
  return [col, row];
}

export function strokeToDomain(points: Point[], size: CanvasSize): Point[] {
  return points.map((p) => canvasToDomain(p, size));
}
