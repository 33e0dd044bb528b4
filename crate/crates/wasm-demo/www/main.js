import init, { tsne_blobs, tune_simulated, loss_weights, names } from "./pkg/argmine_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(el, e) {
  el.innerHTML = `<span class="err">${e.message ?? e}</span>`;
}

function runTsne() {
  const stats = $("tsne-stats");
  stats.textContent = "running...";
  // Let the status paint before the synchronous call blocks.
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const r = JSON.parse(tsne_blobs(num("tsne-n"), num("tsne-dim"), num("tsne-sep"),
        num("tsne-perp"), num("tsne-iter"), BigInt(num("tsne-seed"))));
      const ms = (performance.now() - t0).toFixed(0);
      stats.textContent = `silhouette: input ${r.silhouette_input.toFixed(3)}, ` +
        `projection ${r.silhouette_projection.toFixed(3)} (${ms} ms)`;
      $("tsne-plot").innerHTML = r.svg;
    } catch (e) {
      fail(stats, e);
    }
  }, 0);
}

function drawRoc(r) {
  const c = $("roc");
  const g = c.getContext("2d");
  const s = c.width;
  g.clearRect(0, 0, s, s);
  g.strokeStyle = "#bbb";
  g.beginPath();
  g.moveTo(0, s);
  g.lineTo(s, 0);
  g.stroke();
  g.strokeStyle = "#1f77b4";
  g.beginPath();
  g.moveTo(s, 0);
  for (const [fpr, tpr] of r.roc) g.lineTo(fpr * s, (1 - tpr) * s);
  g.lineTo(0, s);
  g.stroke();
  const mark = (t, color) => {
    const scores = r.scores, labels = r.labels;
    let tp = 0, fp = 0, pos = 0, neg = 0;
    for (let i = 0; i < scores.length; i++) {
      if (labels[i] === 1) { pos++; if (scores[i] > t) tp++; } else { neg++; if (scores[i] > t) fp++; }
    }
    g.fillStyle = color;
    g.beginPath();
    g.arc((fp / Math.max(neg, 1)) * s, (1 - tp / Math.max(pos, 1)) * s, 5, 0, 2 * Math.PI);
    g.fill();
  };
  mark(0.5, "#d62728");
  mark(r.threshold, "#2ca02c");
}

function runThreshold() {
  for (const id of ["th-prev", "th-sep", "th-bias"]) $(id + "-v").textContent = $(id).value;
  const stats = $("th-stats");
  try {
    const r = JSON.parse(tune_simulated(num("th-n"), num("th-prev"), num("th-sep"),
      num("th-bias"), BigInt(num("th-seed"))));
    stats.innerHTML = `tuned threshold <b>${r.threshold.toFixed(4)}</b> (J = ${r.j.toFixed(3)}, green); ` +
      `0.5 gives J = ${r.j_at_half.toFixed(3)} (red)` + (r.note ? `<br>${r.note}` : "");
    drawRoc(r);
  } catch (e) {
    fail(stats, e);
  }
}

const DEFAULT_SIZES = [8000, 5000, 3000];
let TYPES = [];
let TASKS = [];

function buildWeightInputs() {
  $("w-sizes").innerHTML = TYPES.map((name, i) =>
    `<label>${name} <input id="w-size-${i}" type="number" min="0" value="${DEFAULT_SIZES[i]}"></label>`).join("");
  $("w-balance").innerHTML = TASKS.map((name, i) =>
    `<label>${name} <input id="w-bal-${i}" type="number" min="0" max="1" step="0.05" value="0.5"></label>`).join("");
  for (const el of document.querySelectorAll("#weights-section input")) el.addEventListener("input", runWeights);
}

function runWeights() {
  const out = $("w-out");
  try {
    const sizes = new Uint32Array(TYPES.map((_, i) => num(`w-size-${i}`)));
    const bal = new Float64Array(TASKS.map((_, i) => num(`w-bal-${i}`)));
    const r = JSON.parse(loss_weights(sizes, bal));
    const types = r.task_types.map((t, i) =>
      `<tr><td>${t}</td><td>${r.type_weights[i].toFixed(4)}</td></tr>`).join("");
    const tasks = r.tasks.map((t, i) =>
      `<tr><td>${t}</td><td>${r.class_weights[i][0].toFixed(4)}</td><td>${r.class_weights[i][1].toFixed(4)}</td></tr>`).join("");
    out.innerHTML = `<table><tr><th>task type</th><th>weight</th></tr>${types}</table><br>` +
      `<table><tr><th>task</th><th>label 0</th><th>label 1</th></tr>${tasks}</table>`;
  } catch (e) {
    fail(out, e);
  }
}

await init();
({ task_types: TYPES, tasks: TASKS } = JSON.parse(names()));
$("tsne-run").addEventListener("click", runTsne);
for (const id of ["th-n", "th-prev", "th-sep", "th-bias", "th-seed"]) $(id).addEventListener("input", runThreshold);
buildWeightInputs();
runThreshold();
runWeights();
