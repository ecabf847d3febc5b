// Local sketch fitting, mirroring the server's classifier so the studio can
// preview the fitted overlay before the authoritative control_started echo
// arrives.  A stroke whose endpoints sit closer than 15% of its arc length
// is an oval (centroid + twice the per-axis standard deviation); anything
// else is a straight first-to-last arrow.

import type { Point } from "./mapping.js";

export interface FittedArrow {
  kind: "arrow";
  start: Point;
  end: Point;
}

export interface FittedOval {
  kind: "oval";
  center: Point;
  semi_axes: Point;
}

export type FittedSketch = FittedArrow | FittedOval;

export function fitSketch(points: Point[]): FittedSketch {
  if (points.length < 3) {
    throw new Error("stroke needs at least three points");
  }
  let arc = 0;
  for (let i = 1; i < points.length; i++) {
    arc += Math.hypot(points[i][0] - points[i - 1][0],
                      points[i][1] - points[i - 1][1]);
  }
  const first = points[0];
  const last = points[points.length - 1];
  const closure = Math.hypot(first[0] - last[0], first[1] - last[1]);
  if (arc > 0 && closure < 0.15 * arc) {
    const n = points.length;
    const center: Point = [0, 0];
    for (const p of points) {
      center[0] += p[0] / n;
      center[1] += p[1] / n;
    }
    let vx = 0;
    let vy = 0;
    for (const p of points) {
      vx += (p[0] - center[0]) ** 2 / n;
      vy += (p[1] - center[1]) ** 2 / n;
    }
    return { kind: "oval", center, semi_axes: [2 * Math.sqrt(vx), 2 * Math.sqrt(vy)] };
  }
  return { kind: "arrow", start: [...first] as Point, end: [...last] as Point };
}
