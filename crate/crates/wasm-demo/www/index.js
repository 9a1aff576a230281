import init, { flop_curves, cat_field, attention_map } from "./pkg/gformer_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const SVG = "http://www.w3.org/2000/svg";

function report(err) {
  $("status").textContent = err ? String(err.message ?? err) : "";
  $("status").className = err ? "err" : "";
}

function guarded(fn) {
  return () => {
    try {
      fn();
      report(null);
    } catch (e) {
      report(e);
    }
  };
}

function svgEl(tag, attrs, parent) {
  const el = document.createElementNS(SVG, tag);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  parent.appendChild(el);
  return el;
}

// log-log axes, one polyline per series
function drawFlops() {
  const data = JSON.parse(flop_curves(num("fd"), num("fk")));
  const svg = $("flops");
  svg.replaceChildren();
  const [W, H, pad] = [620, 360, 50];
  const xs = data.n.map(Math.log2);
  const all = data.series.flatMap((s) => s.flops.filter((f) => f > 0).map(Math.log10));
  const [y0, y1] = [Math.floor(Math.min(...all)), Math.ceil(Math.max(...all))];
  const px = (x) => pad + ((x - xs[0]) / (xs[xs.length - 1] - xs[0] || 1)) * (W - 2 * pad);
  const py = (y) => H - pad - ((y - y0) / (y1 - y0 || 1)) * (H - 2 * pad);

  svgEl("line", { x1: pad, y1: H - pad, x2: W - pad, y2: H - pad, stroke: "#888" }, svg);
  svgEl("line", { x1: pad, y1: pad, x2: pad, y2: H - pad, stroke: "#888" }, svg);
  for (const x of xs) {
    svgEl("text", { x: px(x), y: H - pad + 16, "text-anchor": "middle", "font-size": 11 }, svg).textContent = 2 ** x;
  }
  for (let y = y0; y <= y1; y++) {
    svgEl("text", { x: pad - 6, y: py(y) + 4, "text-anchor": "end", "font-size": 11 }, svg).textContent = `1e${y}`;
  }
  svgEl("text", { x: W / 2, y: H - 10, "text-anchor": "middle" }, svg).textContent = "n";

  const legend = $("legend");
  legend.replaceChildren();
  data.series.forEach((s, i) => {
    const pts = s.flops
      .map((f, j) => (f > 0 ? `${px(xs[j])},${py(Math.log10(f))}` : null))
      .filter(Boolean)
      .join(" ");
    svgEl("polyline", { points: pts, fill: "none", stroke: COLORS[i % COLORS.length], "stroke-width": 2 }, svg);
    const item = document.createElement("span");
    item.innerHTML = `<i style="background:${COLORS[i % COLORS.length]}"></i>${s.name}`;
    legend.appendChild(item);
    legend.appendChild(document.createElement("br"));
  });
}

function heat(v) {
  const t = Math.max(0, Math.min(1, v));
  return `rgb(${Math.round(255 * t)},${Math.round(80 + 120 * t)},${Math.round(255 * (1 - t))})`;
}

let bump = [0, 0];

function drawCat() {
  const [h, w] = [num("ch"), num("cw")];
  bump = [Math.min(bump[0], h - 1), Math.min(bump[1], w - 1)];
  const data = JSON.parse(cat_field(h, w, num("cd"), bump[0], bump[1], BigInt(num("cs"))));
  const canvas = $("cat");
  const ctx = canvas.getContext("2d");
  const [cw, ch] = [canvas.width / w, canvas.height / h];
  const peak = Math.max(...data.delta) || 1;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  data.delta.forEach((v, i) => {
    ctx.fillStyle = heat(Math.sqrt(v / peak));
    ctx.fillRect((i % w) * cw, Math.floor(i / w) * ch, cw, ch);
  });
  ctx.strokeStyle = "#000";
  ctx.lineWidth = 2;
  ctx.strokeRect(bump[1] * cw + 1, bump[0] * ch + 1, cw - 2, ch - 2);
}

function drawAttention() {
  const data = JSON.parse(attention_map(num("an"), num("ad"), num("ah"), BigInt(num("as"))));
  const box = $("attn");
  box.replaceChildren();
  const n = data.n;
  const size = 240;
  data.heads.forEach((weights, k) => {
    const fig = document.createElement("figure");
    const canvas = document.createElement("canvas");
    canvas.width = canvas.height = size;
    const ctx = canvas.getContext("2d");
    const cell = size / n;
    const peak = Math.max(...weights) || 1;
    weights.forEach((v, i) => {
      ctx.fillStyle = heat(v / peak);
      ctx.fillRect((i % n) * cell, Math.floor(i / n) * cell, cell, cell);
    });
    const cap = document.createElement("figcaption");
    cap.textContent = `head ${k}: row i attends over columns`;
    fig.append(canvas, cap);
    box.appendChild(fig);
  });
}

await init();

for (const id of ["fd", "fk"]) $(id).addEventListener("input", guarded(drawFlops));
for (const id of ["ch", "cw", "cd", "cs"]) $(id).addEventListener("input", guarded(drawCat));
for (const id of ["an", "ad", "ah", "as"]) $(id).addEventListener("input", guarded(drawAttention));
$("cat").addEventListener("click", (ev) => {
  const c = $("cat");
  const r = c.getBoundingClientRect();
  bump = [
    Math.floor(((ev.clientY - r.top) / r.height) * num("ch")),
    Math.floor(((ev.clientX - r.left) / r.width) * num("cw")),
  ];
  guarded(drawCat)();
});

guarded(drawFlops)();
guarded(drawCat)();
guarded(drawAttention)();
