import init, { Session } from "./pkg/kcgm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
let session = null;
let sessionKey = "";

function currentSession() {
  const key = `${num("n")}/${num("seed")}/${num("noise")}`;
  if (key !== sessionKey) {
    session?.free();
    session = new Session(num("n"), BigInt(num("seed")), num("noise"));
    sessionKey = key;
  }
  return session;
}

function frame(canvas, xs, ys, { logY = false } = {}) {
  const ctx = canvas.getContext("2d");
  const pad = 40;
  const f = logY ? (v) => Math.log10(Math.max(v, 1e-300)) : (v) => v;
  const vals = ys.flat().filter(Number.isFinite).map(f);
  const [x0, x1] = [Math.min(...xs.flat()), Math.max(...xs.flat())];
  const [y0, y1] = [Math.min(...vals), Math.max(...vals)];
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (canvas.width - 2 * pad);
  const sy = (y) => canvas.height - pad - ((f(y) - y0) / (y1 - y0 || 1)) * (canvas.height - 2 * pad);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText(logY ? `1e${y1.toFixed(1)}` : y1.toFixed(2), 2, pad + 4);
  ctx.fillText(logY ? `1e${y0.toFixed(1)}` : y0.toFixed(2), 2, canvas.height - pad);
  ctx.fillText(String(x0), pad, canvas.height - pad + 14);
  ctx.fillText(String(x1), canvas.width - pad - 20, canvas.height - pad + 14);
  return { ctx, sx, sy };
}

function line(ctx, sx, sy, xs, ys, color, width = 2) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
  ctx.stroke();
  ctx.lineWidth = 1;
}

function drawCurve() {
  const s = currentSession();
  const t = num("t");
  $("t-value").textContent = t;
  const grid = Array.from(s.grid());
  const fit = Array.from(s.fit_curve($("method").value, num("m"), t, BigInt(num("seed"))));
  const target = Array.from(s.target());
  const xs = Array.from(s.xs());
  const ys = Array.from(s.ys());
  const { ctx, sx, sy } = frame($("curve"), [grid], [ys, fit]);
  ctx.fillStyle = "rgba(60,60,60,0.35)";
  xs.forEach((x, i) => ctx.fillRect(sx(x) - 1.5, sy(ys[i]) - 1.5, 3, 3));
  line(ctx, sx, sy, grid, target, "#2a7");
  line(ctx, sx, sy, grid, fit, "#c33");
}

function drawPath() {
  const s = currentSession();
  const tmax = num("tmax");
  const out = Array.from(s.regularization_path($("method").value, num("m"), tmax, BigInt(num("seed"))));
  const k = out.length / 2;
  const ts = Array.from({ length: k }, (_, i) => i + 1);
  const pred = out.slice(0, k);
  const train = out.slice(k);
  const { ctx, sx, sy } = frame($("path"), [ts], [pred, train], { logY: true });
  line(ctx, sx, sy, ts, pred, "#c33");
  line(ctx, sx, sy, ts, train, "#36c");
  const best = Math.min(...pred);
  $("krr").textContent = `min prediction error ${best.toExponential(3)} at t = ${pred.indexOf(best) + 1}; ` +
    `tuned ridge regression ${s.krr_error().toExponential(3)}`;
}

function drawSweep() {
  const s = currentSession();
  const n = num("n");
  const ms = [];
  for (let m = 2; m <= n; m *= 2) ms.push(m);
  const draws = num("draws");
  const method = $("method").value;
  const kind = method === "classic" ? "ros" : method;
  const errs = Array.from(s.projection_error_sweep(kind, Uint32Array.from(ms), draws));
  const lx = ms.map(Math.log2);
  const { ctx, sx, sy } = frame($("sweep"), [lx], [errs], { logY: true });
  line(ctx, sx, sy, lx, errs, "#835");
}

function guarded(fn) {
  return () => {
    $("status").textContent = "";
    try {
      fn();
    } catch (e) {
      $("status").textContent = String(e.message ?? e);
    }
  };
}

await init();
for (const id of ["n", "seed", "noise", "method", "m", "t"]) $(id).addEventListener("input", guarded(drawCurve));
$("path-run").addEventListener("click", guarded(drawPath));
$("sweep-run").addEventListener("click", guarded(drawSweep));
guarded(drawCurve)();
