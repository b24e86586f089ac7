import init, { grid_hypergraph, sketch_cam, evaluate_jsonl } from "./pkg/hgkit_web.js";

const N = 16;
const $ = (id) => document.getElementById(id);
const sketch = new Float64Array(N * N);
let graph = null;

function fail(e) {
  $("error").textContent = e ? String(e) : "";
}

// Viridis-ish ramp, good enough for a demo.
function color(t) {
  const r = Math.round(255 * Math.min(1, Math.max(0, 1.8 * t - 0.6)));
  const g = Math.round(255 * Math.min(1, 0.15 + 0.85 * t));
  const b = Math.round(255 * Math.max(0, 0.55 - 0.5 * t));
  return `rgb(${r},${g},${b})`;
}

function paintGrid(canvas, values, h, w, ramp) {
  const ctx = canvas.getContext("2d");
  const cw = canvas.width / w, ch = canvas.height / h;
  for (let i = 0; i < h; i++)
    for (let j = 0; j < w; j++) {
      ctx.fillStyle = ramp(values[i * w + j]);
      ctx.fillRect(j * cw, i * ch, cw + 0.5, ch + 0.5);
    }
  return ctx;
}

function drawSketch() {
  paintGrid($("sketch"), sketch, N, N, (v) => `hsl(0,0%,${100 - 85 * v}%)`);
}

function drawDegrees(highlight) {
  if (!graph) return;
  const max = Math.max(...graph.degrees);
  const ctx = paintGrid($("degrees"), graph.degrees.map((d) => d / max), N, N, color);
  if (highlight == null) return;
  const cell = $("degrees").width / N;
  ctx.strokeStyle = "#e00";
  ctx.lineWidth = 2;
  for (const v of graph.edges[highlight]) {
    ctx.strokeRect((v % N) * cell + 1, Math.floor(v / N) * cell + 1, cell - 2, cell - 2);
  }
}

function refresh() {
  try {
    graph = JSON.parse(grid_hypergraph(sketch, N, N, $("metric").value, +$("percentile").value, +$("spatial").value));
    $("graph-info").textContent = `${graph.metric}, ${graph.incidences} memberships`;
    drawDegrees(null);
    const out = 4 * N;
    const cam = sketch_cam(sketch, N, N, +$("channels").value, +$("noise").value, 1n, out, out);
    paintGrid($("cam"), cam, out, out, color);
    fail(null);
  } catch (e) {
    fail(e);
  }
}

function cellAt(canvas, ev) {
  const r = canvas.getBoundingClientRect();
  const j = Math.floor(((ev.clientX - r.left) / r.width) * N);
  const i = Math.floor(((ev.clientY - r.top) / r.height) * N);
  return i >= 0 && i < N && j >= 0 && j < N ? i * N + j : null;
}

function brush(ev) {
  if (!(ev.buttons & 1)) return;
  const c = cellAt($("sketch"), ev);
  if (c == null) return;
  const v = ev.shiftKey ? 0 : 1;
  const [i, j] = [Math.floor(c / N), c % N];
  for (let di = -1; di <= 1; di++)
    for (let dj = -1; dj <= 1; dj++) {
      const [y, x] = [i + di, j + dj];
      if (y < 0 || y >= N || x < 0 || x >= N) continue;
      const k = y * N + x;
      sketch[k] = v ? Math.max(sketch[k], di || dj ? 0.5 : 1) : 0;
    }
  drawSketch();
  refresh();
}

function sample() {
  for (let i = 0; i < N; i++)
    for (let j = 0; j < N; j++) {
      const a = Math.hypot(i - 4, j - 5) / 3, b = Math.hypot(i - 11, j - 10) / 2.5;
      sketch[i * N + j] = Math.min(1, Math.exp(-a * a) + 0.7 * Math.exp(-b * b));
    }
  drawSketch();
  refresh();
}

const SAMPLE_GTS = [
  { image: "a", class: 0, cx: 0, cy: 0, w: 2, h: 2 },
  { image: "a", class: 1, cx: 5, cy: 5, w: 2, h: 2 },
  { image: "b", class: 0, cx: 1, cy: 1, w: 2, h: 2 },
  { image: "c", class: 1, cx: 3, cy: 3, w: 1, h: 2 },
];
const SAMPLE_DETS = [
  { image: "a", class: 0, cx: 0.1, cy: 0, w: 2, h: 2, conf: 0.9 },
  { image: "b", class: 0, cx: 3, cy: 3, w: 2, h: 2, conf: 0.8 },
  { image: "a", class: 1, cx: 5.2, cy: 5, w: 2, h: 2, conf: 0.7 },
  { image: "c", class: 1, cx: 3, cy: 3.8, w: 1, h: 2, conf: 0.6 },
  { image: "b", class: 0, cx: 1, cy: 1.2, w: 2, h: 2, conf: 0.5 },
];

function drawPr(report) {
  const canvas = $("pr"), ctx = canvas.getContext("2d");
  const { width: W, height: H } = canvas, pad = 30;
  const x = (r) => pad + r * (W - 2 * pad), y = (p) => H - pad - p * (H - 2 * pad);
  ctx.clearRect(0, 0, W, H);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.fillText("recall", W / 2 - 15, H - 8);
  ctx.fillText("precision", 2, pad - 8);
  const hues = [210, 20, 120, 280, 50];
  report.per_class.forEach((c, k) => {
    if (!c.curve.length) return;
    ctx.strokeStyle = `hsl(${hues[k % hues.length]},70%,45%)`;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(x(0), y(c.curve[0].precision));
    for (const p of c.curve) ctx.lineTo(x(p.recall), y(p.precision));
    ctx.stroke();
  });
  const fmt = (v) => (v == null ? "n/a" : v.toFixed(4));
  $("pr-info").innerHTML =
    report.per_class.map((c) => `class ${c.class}: AP ${fmt(c.ap)}`).join("<br>") +
    `<br>mAP ${fmt(report.map)}, mAP@sweep ${fmt(report.map_sweep)}<br>` +
    `best F1 ${fmt(report.point.f1)} at conf ${fmt(report.point.confidence)}`;
}

function evaluate() {
  try {
    drawPr(JSON.parse(evaluate_jsonl($("dets").value, $("gts").value, +$("classes").value, +$("iou").value)));
    fail(null);
  } catch (e) {
    fail(e);
  }
}

await init();
const jsonl = (rows) => rows.map((r) => JSON.stringify(r)).join("\n");
$("dets").value = jsonl(SAMPLE_DETS);
$("gts").value = jsonl(SAMPLE_GTS);

$("sketch").addEventListener("pointerdown", brush);
$("sketch").addEventListener("pointermove", brush);
$("degrees").addEventListener("pointermove", (ev) => drawDegrees(cellAt($("degrees"), ev)));
$("degrees").addEventListener("pointerleave", () => drawDegrees(null));
$("clear").onclick = () => { sketch.fill(0); drawSketch(); refresh(); };
$("blob").onclick = sample;
for (const id of ["metric", "percentile", "spatial", "channels", "noise"]) $(id).addEventListener("input", refresh);
$("evaluate").onclick = evaluate;

sample();
evaluate();
