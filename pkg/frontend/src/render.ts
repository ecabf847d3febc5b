// Canvas renderer: particles color-coded by depth/material, mode badge,
// latency sparkline, fitted-sketch overlay.  Everything here is a thin
// projection of ViewModel state; no simulation logic.

import { domainToCanvas, type CanvasSize, type Point } from "./mapping.js";
import type { DecodedFrame, ViewModel } from "./viewmodel.js";

const BADGE_COLORS: Record<string, string> = {
  NEURAL: "#2e9e4f",
  MPM: "#d9822b",
  CONTROL: "#7048c9",
  RUNNING_HYBRID: "#2e9e4f",
  CONTROLLING: "#7048c9",
  IDLE: "#888888",
};

export function badgeColor(mode: string): string {
  return BADGE_COLORS[mode] ?? "#888888";
}

export function renderFrame(ctx: CanvasRenderingContext2D, frame: DecodedFrame,
                            size: CanvasSize): void {
  ctx.clearRect(0, 0, size.width, size.height);
  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, size.width, size.height);
  const { positions, count, dim } = frame;
  ctx.fillStyle = "#58b7ff";
  for (let i = 0; i < count; i++) {
    const x = positions[i * dim];
    const y = positions[i * dim + 1];
    // 3D scenarios project orthographically; depth scales the point size
    const depth = dim === 3 ? positions[i * dim + 2] : 0.5;
    const radius = dim === 3 ? 1.0 + 2.5 * depth : 2.0;
    const [col, row] = domainToCanvas([x, y], size);
    ctx.beginPath();
    ctx.arc(col, row, radius, 0, 2 * Math.PI);
    ctx.fill();
  }
}

export function renderSketchOverlay(ctx: CanvasRenderingContext2D,
                                    sketch: Record<string, unknown>,
                                    size: CanvasSize): void {
  ctx.strokeStyle = "#ffd24a";
  ctx.lineWidth = 2;
  if (sketch.kind === "arrow") {
    const start = domainToCanvas(sketch.start as Point, size);
    const end = domainToCanvas(sketch.end as Point, size);
    ctx.beginPath();
    ctx.moveTo(start[0], start[1]);
    ctx.lineTo(end[0], end[1]);
    ctx.stroke();
    const angle = Math.atan2(end[1] - start[1], end[0] - start[0]);
    for (const barb of [2.5, -2.5]) {
      ctx.beginPath();
      ctx.moveTo(end[0], end[1]);
      ctx.lineTo(end[0] + 12 * Math.cos(angle + barb),
                 end[1] + 12 * Math.sin(angle + barb));
      ctx.stroke();
    }
  } else if (sketch.kind === "oval") {
    const center = domainToCanvas(sketch.center as Point, size);
    const semi = sketch.semi_axes as Point;
    ctx.beginPath();
    ctx.ellipse(center[0], center[1], semi[0] * (size.width - 1),
                semi[1] * (size.height - 1), 0, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

export function renderHud(ctx: CanvasRenderingContext2D, vm: ViewModel,
                          size: CanvasSize): void {
  const mode = vm.hud.mode;
  ctx.fillStyle = badgeColor(mode);
  ctx.fillRect(8, 8, 110, 22);
  ctx.fillStyle = "#ffffff";
  ctx.font = "12px monospace";
  ctx.fillText(mode, 14, 23);
  ctx.fillText(`${vm.hud.latencyMs.toFixed(2)} ms`, 130, 23);
  ctx.fillText(`rc=${vm.hud.rc.toFixed(2)} mpm=${(vm.hud.mpmFraction * 100).toFixed(0)}%`,
               220, 23);
  // latency sparkline
  const history = vm.latencyHistory;
  if (history.length > 1) {
    const peak = Math.max(...history, 1e-6);
    ctx.strokeStyle = "#8fe3a1";
    ctx.beginPath();
    history.forEach((value, i) => {
      const x = 8 + (i / (history.length - 1)) * 160;
      const y = 56 - (value / peak) * 20;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
}
