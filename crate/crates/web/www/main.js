import init, { AnomalyDemo, ProDemo } from "./pkg/stad_web.js";

const SIDE = 48;
const $ = (id) => document.getElementById(id);
let demo = null;

function paint(canvas, rgba, side) {
  canvas.width = side;
  canvas.height = side;
  const img = new ImageData(new Uint8ClampedArray(rgba), side, side);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function clear(canvas) {
  canvas.getContext("2d").clearRect(0, 0, canvas.width, canvas.height);
}

function status(text) {
  $("status").textContent = text;
}

function refresh() {
  paint($("image"), demo.image_rgba(), SIDE);
  if (!demo.is_trained()) {
    ["e", "v", "combined"].forEach((k) => clear($("map-" + k)));
    return;
  }
  demo.score();
  for (const k of ["e", "v", "combined"]) {
    paint($("map-" + k), demo.map_rgba(k), SIDE);
  }
  const hasDefect = demo.mask().some((m) => m);
  status(hasDefect
    ? `mean combined score inside the patches minus outside: ${demo.contrast().toFixed(2)}`
    : "Trained. Click the image to add a defect.");
}

function reload() {
  demo = new AnomalyDemo(Number($("seed").value), SIDE);
  refresh();
  status("Press Train.");
}

$("seed").addEventListener("change", reload);

$("train").addEventListener("click", () => {
  status("Training…");
  // Let the status line render before the blocking call.
  setTimeout(() => {
    const t0 = performance.now();
    const loss = demo.train(Number($("iters").value), Number($("students").value), Number($("epochs").value));
    const secs = ((performance.now() - t0) / 1000).toFixed(1);
    refresh();
    status(`Trained in ${secs} s (final teacher loss ${loss.toFixed(3)}). Click the image to add a defect.`);
  }, 20);
});

$("image").addEventListener("click", (ev) => {
  const r = ev.target.getBoundingClientRect();
  const x = Math.floor(((ev.clientX - r.left) / r.width) * SIDE);
  const y = Math.floor(((ev.clientY - r.top) / r.height) * SIDE);
  demo.add_defect(x, y, Number($("size").value));
  refresh();
});

$("reset").addEventListener("click", () => {
  demo.reset();
  refresh();
});

$("size").addEventListener("input", () => ($("size-out").textContent = $("size").value));

function drawPro() {
  const sep = Number($("sep").value);
  const limit = Number($("limit").value);
  $("sep-out").textContent = sep.toFixed(1);
  $("limit-out").textContent = limit.toFixed(2);
  const pro = new ProDemo(Number($("pro-seed").value), sep, limit);
  const pts = pro.curve();

  const c = $("pro-plot");
  const g = c.getContext("2d");
  const pad = 36, w = c.width - pad - 10, h = c.height - pad - 10;
  const X = (f) => pad + f * w, Y = (p) => 10 + (1 - p) * h;
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#999";
  g.strokeRect(pad, 10, w, h);
  g.fillStyle = "#555";
  g.font = "11px system-ui";
  g.fillText("FPR", pad + w / 2 - 10, c.height - 6);
  g.save();
  g.translate(10, 10 + h / 2 + 20);
  g.rotate(-Math.PI / 2);
  g.fillText("mean PRO", 0, 0);
  g.restore();
  for (const t of [0, 0.5, 1]) {
    g.fillText(t.toString(), X(t) - 4, 10 + h + 14);
    g.fillText(t.toString(), pad - 18, Y(t) + 4);
  }

  g.fillStyle = "rgba(40, 120, 160, 0.15)";
  g.fillRect(X(0), 10, X(limit) - X(0), h);

  g.strokeStyle = "#1a5f8a";
  g.lineWidth = 2;
  g.beginPath();
  for (let i = 0; i < pts.length; i += 2) {
    const [f, p] = [pts[i], pts[i + 1]];
    if (i === 0) g.moveTo(X(f), Y(p));
    else g.lineTo(X(f), Y(p));
  }
  g.stroke();

  $("pro-text").innerHTML =
    `PRO AUC up to FPR ${limit.toFixed(2)}: <b>${pro.pro_auc().toFixed(3)}</b><br>` +
    `image-level ROC AUC (max score): <b>${pro.roc_auc().toFixed(3)}</b><br>` +
    `${pts.length / 2} curve points over ${pro.images()} images`;
}

for (const id of ["sep", "limit", "pro-seed"]) {
  $(id).addEventListener("input", drawPro);
}

await init();
reload();
drawPro();
