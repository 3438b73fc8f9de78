import init, { gsetPicture, blockPicture, noisePicture } from "./pkg/attractor_forge_demo.js";

const PRESETS = {
  hopf: {
    field: "x1*(1 - x1^2 - x2^2) - x2; x2*(1 - x1^2 - x2^2) + x1",
    region: "(x1^2 + x2^2 - 0.25)*(x1^2 + x2^2 - 2.25)",
    extent: 1.7, res: 64,
  },
  node: { field: "-x1; -2*x2", region: "x1^2 + x2^2 - 1", extent: 1.25, res: 64 },
  bistable: { field: "x1 - x1^3; -x2", region: "(x1 - 1)^2 + x2^2 - 0.25", extent: 2, res: 80 },
};

const LAYERS = {
  gset: ["N", "G^T(N)", "exit set Γ^T(N)"],
  block: ["neighbourhood", "stable block", "attractor"],
  noise: ["stable block", "attractor", "D(ω)"],
};
const COLOURS = [[255, 255, 255], [214, 222, 235], [70, 130, 200], [220, 70, 50]];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function applyPreset(name) {
  const p = PRESETS[name];
  $("field").value = p.field;
  $("region").value = p.region;
  $("extent").value = p.extent;
  $("res").value = p.res;
}

function draw(pic, op) {
  const canvas = $("view");
  canvas.width = pic.nx;
  canvas.height = pic.ny;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(pic.nx, pic.ny);
  const cells = pic.cells;
  for (let j = 0; j < pic.ny; j++) {
    // row 0 is the bottom of the domain
    const y = pic.ny - 1 - j;
    for (let i = 0; i < pic.nx; i++) {
      const c = COLOURS[cells[j * pic.nx + i]] ?? COLOURS[0];
      const k = 4 * (y * pic.nx + i);
      img.data.set([c[0], c[1], c[2], 255], k);
    }
  }
  ctx.putImageData(img, 0, 0);
  $("legend").innerHTML = LAYERS[op]
    .map((name, k) => `<span style="background: rgb(${COLOURS[k + 1].join(",")})"></span>${name}`)
    .join("");
}

function run() {
  const op = document.querySelector("input[name=op]:checked").value;
  const args = [$("field").value, $("region").value, num("extent"), num("res")];
  $("status").textContent = "computing…";
  // let the status repaint before the synchronous computation
  setTimeout(() => {
    const t0 = performance.now();
    try {
      let pic;
      if (op === "gset") pic = gsetPicture(...args, num("horizon"));
      else if (op === "block") pic = blockPicture(...args, num("epsilon"));
      else pic = noisePicture(...args, num("epsilon"), num("rho"), num("horizon"), num("seed"));
      draw(pic, op);
      $("status").textContent = `${pic.summary}\n(${((performance.now() - t0) / 1000).toFixed(2)} s)`;
      pic.free();
    } catch (e) {
      $("status").textContent = `error: ${e.message ?? e}`;
    }
  }, 10);
}

await init();
$("preset").addEventListener("change", (e) => applyPreset(e.target.value));
$("run").addEventListener("click", run);
applyPreset("hopf");
$("status").textContent = "ready";
run();
