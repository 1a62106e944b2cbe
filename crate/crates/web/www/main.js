import init, { harmonic_curves, overshoot_histogram, drift_probabilities } from "./pkg/interval_avoid_web.js";

const num = (id) => Number(document.getElementById(id).value);
const model = () => [num("sigma"), num("lambda"), num("eta"), num("a"), num("b")];

function show(id, text, error = false) {
  const el = document.getElementById(id);
  el.textContent = text;
  el.className = error ? "out err" : "out";
}

function guarded(outId, fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      show(outId, String(e.message ?? e), true);
    }
  };
}

// series: [{xs, ys, color, bars}]
function plot(canvasId, series) {
  const cv = document.getElementById(canvasId);
  const g = cv.getContext("2d");
  const pad = 30;
  g.clearRect(0, 0, cv.width, cv.height);
  const xs = series.flatMap((s) => s.xs);
  const ys = series.flatMap((s) => s.ys).concat([0]);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys) * 1.05];
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (cv.width - 2 * pad);
  const py = (y) => cv.height - pad - ((y - y0) / (y1 - y0)) * (cv.height - 2 * pad);
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad, cv.width - 2 * pad, cv.height - 2 * pad);
  g.fillStyle = "#555";
  g.fillText(x0.toPrecision(3), pad, cv.height - 10);
  g.fillText(x1.toPrecision(3), cv.width - pad - 20, cv.height - 10);
  g.fillText(y1.toPrecision(3), 2, pad + 4);
  for (const s of series) {
    g.strokeStyle = s.color;
    g.fillStyle = s.color;
    if (s.bars) {
      const w = (px(s.xs[1] ?? x1) - px(s.xs[0])) * 0.9;
      s.xs.forEach((x, i) => g.fillRect(px(x), py(s.ys[i]), w, py(0) - py(s.ys[i])));
      continue;
    }
    g.beginPath();
    s.xs.forEach((x, i) => {
      // break the line across the interval gap
      if (i > 0 && s.xs[i] - s.xs[i - 1] > 2 * (s.xs[1] - s.xs[0])) g.moveTo(px(x), py(s.ys[i]));
      else (i ? g.lineTo : g.moveTo).call(g, px(x), py(s.ys[i]));
    });
    g.stroke();
  }
}

function curves() {
  const n = 100;
  const rows = harmonic_curves(...model(), num("span"), n);
  const col = (j) => Array.from({ length: rows.length / 4 }, (_, i) => rows[4 * i + j]);
  const xs = col(0);
  plot("curves-plot", [
    { xs, ys: col(1), color: "#c33" },
    { xs, ys: col(2), color: "#36c" },
    { xs, ys: col(3), color: "#222" },
  ]);
  show("curves-out", "red h₊   blue h₋   black h = h₊ + h₋");
}

function overshoot() {
  const bins = 30;
  const rows = overshoot_histogram(...model(), num("o-start"), num("o-paths"), BigInt(num("o-seed")), bins, 6 / num("eta"));
  const [mass, exact, se, samples] = rows;
  const body = rows.slice(4);
  const col = (j) => Array.from({ length: bins }, (_, i) => body[3 * i + j]);
  plot("overshoot-plot", [
    { xs: col(0), ys: col(1), color: "rgba(80,120,200,0.6)", bars: true },
    { xs: col(0), ys: col(2), color: "#c33" },
  ]);
  show(
    "overshoot-out",
    `first-crossing mass  simulated ${mass.toFixed(5)} ± ${se.toFixed(5)}   exact ${exact.toFixed(5)}   (${samples} crossings)\n` +
      "bars: simulated density of the distance past the far edge   line: exact",
  );
}

function drift() {
  const [up, seUp, down, seDown, target] = drift_probabilities(
    ...model(),
    document.getElementById("d-transform").value,
    num("d-start"),
    num("d-horizon"),
    num("d-particles"),
    BigInt(num("d-seed")),
  );
  show(
    "drift-out",
    `P(above b at horizon) = ${up.toFixed(4)} ± ${seUp.toFixed(4)}\n` +
      `P(below a at horizon) = ${down.toFixed(4)} ± ${seDown.toFixed(4)}\n` +
      `long-time limit of P(above) = ${target.toFixed(4)}`,
  );
}

await init();
document.getElementById("curves").onclick = guarded("curves-out", curves);
document.getElementById("overshoot").onclick = guarded("overshoot-out", overshoot);
document.getElementById("drift").onclick = guarded("drift-out", drift);
guarded("curves-out", curves)();
