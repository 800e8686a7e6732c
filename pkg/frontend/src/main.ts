// Browser entry: wires the session to the canvas scene, the keyboard /
// gamepad input loop, and the three metric charts.

import { ConsoleSession } from './session.js';
import { KeyboardAxes, mapGamepad } from './input.js';
import { computeScene, DEFAULT_GEOMETRY, type SceneModel } from './scene.js';
import { scaleSeries } from './charts.js';

const wsUrl =
  new URLSearchParams(location.search).get('ws') ?? 'ws://127.0.0.1:8787';

const session = new ConsoleSession(wsUrl);
const keyboard = new KeyboardAxes(2);

document.addEventListener('keydown', (e) => {
  keyboard.keyDown(e.code);
  if (e.code === 'Space') e.preventDefault();
});
document.addEventListener('keyup', (e) => keyboard.keyUp(e.code));
window.addEventListener('blur', () => keyboard.releaseAll());

const sceneCanvas = document.getElementById('scene') as HTMLCanvasElement;
const imageCanvas = document.getElementById('occupancy') as HTMLCanvasElement;
const chartCanvases = {
  success_rate: document.getElementById('chart-success') as HTMLCanvasElement,
  cycle: document.getElementById('chart-cycle') as HTMLCanvasElement,
  intervention: document.getElementById('chart-intervention') as HTMLCanvasElement,
};
const statusEl = document.getElementById('status') as HTMLElement;
const metricsEl = document.getElementById('metrics') as HTMLElement;

for (const [id, command] of [
  ['btn-start', 'start'],
  ['btn-pause', 'pause'],
  ['btn-reset', 'reset'],
] as const) {
  document.getElementById(id)?.addEventListener('click', () =>
    session.sendControl(command),
  );
}

// operator input at the control rate
setInterval(() => {
  const pads = navigator.getGamepads ? navigator.getGamepads() : [];
  const pad = pads && pads[0];
  const input = pad
    ? mapGamepad(pad.axes, pad.buttons, 2)
    : keyboard.sample();
  if (session.state === 'connected') {
    session.sendInput(input.axes, input.override, input.stopButton);
  }
}, 100);

function drawScene(model: SceneModel): void {
  const ctx = sceneCanvas.getContext('2d');
  if (!ctx) return;
  const W = sceneCanvas.width;
  const H = sceneCanvas.height;
  ctx.clearRect(0, 0, W, H);
  // world (mm) to pixels: x in [-60, 60], z in [-20, 40]
  const sx = W / 120;
  const sz = H / 60;
  const px = (x: number) => (x + 60) * sx;
  const pz = (z: number) => H - (z + 20) * sz;

  ctx.strokeStyle = '#555';
  ctx.lineWidth = 2;
  ctx.beginPath();
  model.blockOutline.forEach(([x, z], i) =>
    i === 0 ? ctx.moveTo(px(x), pz(z)) : ctx.lineTo(px(x), pz(z)),
  );
  ctx.stroke();

  ctx.fillStyle = model.intervened ? '#d9822b' : '#4a90d9';
  ctx.beginPath();
  model.pegPolygon.forEach(([x, z], i) =>
    i === 0 ? ctx.moveTo(px(x), pz(z)) : ctx.lineTo(px(x), pz(z)),
  );
  ctx.closePath();
  ctx.fill();

  if (model.forceArrow) {
    ctx.strokeStyle = '#c0392b';
    ctx.beginPath();
    ctx.moveTo(px(model.forceArrow.from[0]), pz(model.forceArrow.from[1]));
    ctx.lineTo(px(model.forceArrow.to[0]), pz(model.forceArrow.to[1]));
    ctx.stroke();
  }
  ctx.fillStyle = '#222';
  ctx.font = '14px monospace';
  ctx.fillText(`primitive: ${model.primitive}`, 8, 18);
  if (model.intervened) ctx.fillText('INTERVENING', 8, 36);
}

function drawImage(image: number[] | null): void {
  const ctx = imageCanvas.getContext('2d');
  if (!ctx || !image) return;
  const n = Math.round(Math.sqrt(image.length));
  const cell = imageCanvas.width / n;
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < n; c++) {
      const v = image[r * n + c];
      const g = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${g},${g},${g})`;
      ctx.fillRect(c * cell, r * cell, cell, cell);
    }
  }
}

function drawChart(
  canvas: HTMLCanvasElement,
  series: [number, number][],
  yMin?: number,
  yMax?: number,
): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const scaled = scaleSeries(
    series,
    { width: canvas.width, height: canvas.height, padding: 8 },
    yMin,
    yMax,
  );
  ctx.strokeStyle = '#2c7a43';
  ctx.beginPath();
  scaled.points.forEach(([x, y], i) =>
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y),
  );
  ctx.stroke();
}

function render(): void {
  statusEl.textContent = `${session.state}${
    session.hasAuthority ? ' (authority)' : ''
  }${session.lastError ? ' | ' + session.lastError : ''}`;
  const f = session.latestFrame;
  if (f) {
    drawScene(computeScene(f, DEFAULT_GEOMETRY));
    drawImage(f.image);
    const m = f.metrics;
    metricsEl.textContent =
      `tick ${f.tick} ep ${f.episode} | ` +
      `success ${(m.success_rate ?? 0).toFixed(2)} | ` +
      `cycle ${m.cycle_time == null ? '-' : m.cycle_time.toFixed(2) + ' s'} | ` +
      `interv ${(m.intervention_rate ?? 0).toFixed(3)}`;
  }
  drawChart(chartCanvases.success_rate, session.metrics.series('success_rate'), 0, 1);
  drawChart(chartCanvases.cycle, session.metrics.cycleSeries(), 0);
  drawChart(
    chartCanvases.intervention,
    session.metrics.series('intervention_rate'),
    0,
    1,
  );
  requestAnimationFrame(render);
}

requestAnimationFrame(render);
