import init, { Demo } from "./pkg/recloser_demo.js";

const COLUMNS = ["Vssa", "Vssb", "Vssc", "Vlsa", "Vlsb", "Vlsc", "Ilsa", "Ilsb", "Ilsc"];
const VARIANTS = [
  "SsVoltageA", "SsVoltageB", "SsVoltageC",
  "LsVoltageA", "LsVoltageB", "LsVoltageC",
  "LsCurrentA", "LsCurrentB", "LsCurrentC",
];
const ROWS = ["source-side voltage", "load-side voltage", "load-side current"];
const PHASE_COLORS = ["#c0392b", "#2c7bb6", "#333"];
const LAMBDAS = Array.from({ length: 25 }, (_, i) => 10 ** (-3 + (i * 3.3) / 24));

const $ = (id) => document.getElementById(id);
let demo = null;
let view = null;
let selected = 0;

function status(text) {
  $("status").textContent = text;
}

// Runs `f` after the status line has repainted.
function busy(text, f) {
  status(text);
  setTimeout(() => {
    try {
      f();
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 20);
}

function train() {
  const n = Number($("train-n").value);
  const seed = BigInt($("train-seed").value);
  busy(`training on ${n} synthetic events…`, () => {
    const t0 = performance.now();
    demo?.free();
    demo = new Demo(n, seed);
    const s = JSON.parse(demo.trainingSummary());
    status(`trained in ${((performance.now() - t0) / 1000).toFixed(1)} s: ${JSON.stringify(s.windows)}`);
    simulate();
  });
}

function simulate() {
  if (!demo) return;
  busy("analyzing…", () => {
    demo.setLambda(Number($("lambda").value));
    demo.setConfidence(Number($("conf").value));
    view = JSON.parse(demo.simulate($("kind").value, BigInt($("event-seed").value)));
    selected = 0;
    drawEvent();
    fillTable();
    drawSweep();
    const pulses = view.candidates.filter((c) => c.label === 1).length;
    status(
      `${view.kind}: ${view.truth.pulses.length} true pulses, ${view.candidates.length} candidates, ` +
        `${pulses} labeled pulse; all poles open at end: ${view.all_poles_open_at_end}`,
    );
  });
}

function drawEvent() {
  const cv = $("waves");
  const ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const n = view.channels[0].values.length;
  const left = 150;
  const rowH = cv.height / 3;
  const x = (k) => left + ((cv.width - left - 10) * k) / n;

  for (let row = 0; row < 3; row++) {
    const top = row * rowH;
    const mid = top + rowH / 2;
    const chans = view.channels.slice(row * 3, row * 3 + 3);
    const peak = Math.max(1, ...chans.flatMap((c) => c.values.map(Math.abs)));
    const y = (v) => mid - (v / peak) * (rowH / 2 - 12);

    // candidate windows: green for pulse, grey for background
    for (const [i, c] of view.candidates.entries()) {
      if (Math.floor(COLUMNS.indexOf(c.channel) / 3) !== row) continue;
      ctx.fillStyle = c.label === 1 ? "rgba(46,160,67,0.25)" : "rgba(120,120,120,0.2)";
      ctx.fillRect(x(c.start), top + 2, x(c.end) - x(c.start), rowH - 4);
      if (i === selected) {
        ctx.strokeStyle = "#e69f00";
        ctx.strokeRect(x(c.start), top + 2, x(c.end) - x(c.start), rowH - 4);
      }
    }
    for (const p of view.truth.pulses) {
      if (Math.floor(VARIANTS.indexOf(p.channel) / 3) !== row) continue;
      ctx.fillStyle = PHASE_COLORS[VARIANTS.indexOf(p.channel) % 3];
      ctx.fillRect(x(p.start), top + 2, Math.max(2, x(p.end) - x(p.start)), 6);
    }

    chans.forEach((c, phase) => {
      ctx.strokeStyle = PHASE_COLORS[phase];
      ctx.lineWidth = 1;
      ctx.beginPath();
      c.values.forEach((v, k) => (k ? ctx.lineTo(x(k), y(v)) : ctx.moveTo(x(k), y(v))));
      ctx.stroke();
    });

    ctx.fillStyle = "#222";
    ctx.fillText(ROWS[row], 4, top + 16);
    ctx.fillText(`±${peak.toFixed(0)}`, 4, top + 32);
    ctx.strokeStyle = "#ddd";
    ctx.beginPath();
    ctx.moveTo(0, top + rowH);
    ctx.lineTo(cv.width, top + rowH);
    ctx.stroke();
  }

  // pole status strip per phase along the load-side voltage row
  ["A", "B", "C"].forEach((ph, i) => {
    const changes = view.timeline.phases[ph].status;
    const yy = 2 * rowH - 8 - i * 5;
    changes.forEach(([start, closed], j) => {
      const end = j + 1 < changes.length ? changes[j + 1][0] : n;
      ctx.fillStyle = closed ? PHASE_COLORS[i] : "transparent";
      ctx.fillRect(x(start), yy, x(end) - x(start), 3);
    });
  });
}

function fillTable() {
  const body = $("cands").querySelector("tbody");
  body.replaceChildren();
  view.candidates.forEach((c, i) => {
    const tr = document.createElement("tr");
    if (i === selected) tr.className = "sel";
    const cells = [i, c.channel, c.start, c.label === 1 ? "pulse" : "background",
      c.confidence?.toFixed(3) ?? "", c.rejected_reason ?? c.error ?? ""];
    for (const v of cells) {
      const td = document.createElement("td");
      td.textContent = v;
      tr.append(td);
    }
    tr.onclick = () => {
      selected = i;
      drawEvent();
      fillTable();
      drawSweep();
    };
    body.append(tr);
  });
}

function drawSweep() {
  const cv = $("sweep");
  const ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  if (!view.candidates.length) {
    ctx.fillText("no candidates in this event", 10, 20);
    return;
  }
  const s = JSON.parse(demo.sweep(selected, new Float64Array(LAMBDAS)));
  const w = 360;

  // the window itself
  const peak = Math.max(...s.window.map(Math.abs), 1e-9);
  ctx.strokeStyle = "#333";
  ctx.beginPath();
  s.window.forEach((v, k) => {
    const px = 10 + (k * (w - 20)) / s.window.length;
    const py = cv.height / 2 - (v / peak) * (cv.height / 2 - 20);
    k ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
  ctx.fillStyle = "#222";
  ctx.fillText(`${s.channel} @ ${s.start}`, 10, 14);

  // confidence, class residuals and support size against log λ
  const x0 = w + 40;
  const x1 = cv.width - 20;
  const lx = (l) => x0 + ((x1 - x0) * (Math.log10(l) + 3)) / 3.3;
  const ly = (v) => cv.height - 20 - v * (cv.height - 40);
  const maxNnz = Math.max(1, ...s.points.map((p) => p.nnz));
  const series = [
    ["confidence", "#2ea043", (p) => Math.max(0, p.confidence)],
    ["r target", "#c0392b", (p) => p.r_target],
    ["r background", "#2c7bb6", (p) => p.r_background],
    [`nnz / ${maxNnz}`, "#999", (p) => p.nnz / maxNnz],
  ];
  series.forEach(([name, color, f], i) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    s.points.forEach((p, k) => (k ? ctx.lineTo(lx(p.lambda), ly(f(p))) : ctx.moveTo(lx(p.lambda), ly(f(p)))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(name, x0 + 10 + i * 110, 14);
  });
  const lambda = Number($("lambda").value);
  if (lambda > 0) {
    ctx.strokeStyle = "#e69f00";
    ctx.beginPath();
    ctx.moveTo(lx(lambda), 20);
    ctx.lineTo(lx(lambda), cv.height - 20);
    ctx.stroke();
  }
  ctx.fillStyle = "#222";
  ctx.fillText("λ = 0.001", x0, cv.height - 4);
  ctx.fillText("λ = 2", x1 - 40, cv.height - 4);
}

await init();
$("train").onclick = train;
$("simulate").onclick = simulate;
train();
