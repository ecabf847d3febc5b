// Studio entry point: create a session, stream frames onto the canvas, and
// turn pointer strokes into control messages.

import { StudioClient, createSession } from "./client.js";
import { canvasToDomain, domainToCanvas, type CanvasSize } from "./mapping.js";
import { renderFrame, renderHud, renderSketchOverlay } from "./render.js";
import { fitSketch } from "./sketchfit.js";
import { ViewModel } from "./viewmodel.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const size: CanvasSize = { width: canvas.width, height: canvas.height };
const vm = new ViewModel();
const client = new StudioClient(vm);

const scenario = new URLSearchParams(location.search).get("scenario")
  ?? "water2d-desk";
const base = `${location.protocol}//${location.host}`;

createSession(base, scenario).then((info) => {
  const wsProto = location.protocol === "https:" ? "wss" : "ws";
  client.connect(`${wsProto}://${location.host}/sessions/${info.session_id}/stream`);
});

canvas.addEventListener("pointerdown", (event) => {
  vm.beginStroke(canvasToDomain([event.offsetX, event.offsetY], size));
});
canvas.addEventListener("pointermove", (event) => {
  if (event.buttons) {
    vm.extendStroke(canvasToDomain([event.offsetX, event.offsetY], size));
  }
});
canvas.addEventListener("pointerup", () => {
  const stroke = vm.finishStroke();
  if (stroke) {
    vm.fittedSketch = fitSketch(stroke) as unknown as Record<string, unknown>;
    client.submitStroke(stroke);
  }
});

const rcSlider = document.getElementById("rc") as HTMLInputElement | null;
rcSlider?.addEventListener("change", () => {
  client.setThreshold(parseFloat(rcSlider.value));
});

function tick(): void {
  const frame = vm.nextFrameToRender();
  if (frame) {
    renderFrame(ctx, frame, size);
    if (vm.fittedSketch) renderSketchOverlay(ctx, vm.fittedSketch, size);
    if (vm.strokeInProgress.length > 1) {
      ctx.strokeStyle = "#ffffff88";
      ctx.beginPath();
      vm.strokeInProgress.forEach((p, i) => {
        const [col, row] = domainToCanvas(p, size);
        if (i === 0) ctx.moveTo(col, row);
        else ctx.lineTo(col, row);
      });
      ctx.stroke();
    }
    renderHud(ctx, vm, size);
  }
  requestAnimationFrame(tick);
}
requestAnimationFrame(tick);
