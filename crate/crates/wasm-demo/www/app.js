import init, { nablaTriangle, classifyLabel, patternSearch } from "./pkg/metastim_wasm.js";

const $ = (id) => document.getElementById(id);
const numbers = (s) => s.split(",").map((x) => x.trim()).filter((x) => x !== "").map(Number);

function show(el, fn) {
  try {
    el.classList.remove("error");
    el.textContent = fn();
  } catch (e) {
    el.classList.add("error");
    el.textContent = String(e);
  }
}

function runNabla() {
  show($("nabla-out"), () => {
    const rows = $("nabla-input").value.split("\n").filter((l) => l.trim()).map(numbers);
    const view = JSON.parse(nablaTriangle(JSON.stringify(rows)));
    return view.levels
      .map((level, j) => `level ${j}: ${level.map((r) => `[${r.join(", ")}]`).join(" ")}  sum [${view.sums[j].join(", ")}]`)
      .join("\n");
  });
}

function runLabel() {
  show($("label-out"), () => {
    const query = {
      labels: numbers($("label-labels").value),
      d_out: Number($("label-dout").value),
      yhat: numbers($("label-yhat").value),
    };
    const v = JSON.parse(classifyLabel(JSON.stringify(query)));
    const fmt = (xs) => xs.map((x) => x.toFixed(3)).join(", ");
    return [
      `nearest (projected):  ${v.projected_nearest}`,
      `nearest (node space): ${v.node_space_nearest}`,
      `reconstruction: [${fmt(v.reconstruction)}]`,
      "projected candidates:",
      ...v.candidates.map((c, i) => `  ${c}: [${fmt(v.projected[i])}]`),
    ].join("\n");
  });
}

let target = [17, 6];

function runSearch() {
  const size = Number($("search-size").value);
  const canvas = $("search-canvas");
  const ctx = canvas.getContext("2d");
  show($("search-out"), () => {
    const v = JSON.parse(patternSearch(JSON.stringify({ size, target, seed: Number($("search-seed").value) })));
    const cell = canvas.width / size;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    for (const row of v.trace) {
      const [x, y] = row.point;
      ctx.fillStyle = row.kind === "chosen" ? "#2a7" : row.kind === "base" ? "#e80" : "#ccd";
      ctx.fillRect(x * cell, y * cell, cell, cell);
    }
    ctx.strokeStyle = "#c00";
    ctx.strokeRect(target[0] * cell, target[1] * cell, cell, cell);
    return `best [${v.best}] fitness ${v.best_fitness.toFixed(3)} (start ${v.base_fitness.toFixed(3)}), ` +
      `${v.evaluations} evaluations\n` +
      v.trace.map((r) => `${r.iter}\t${r.kind}\t[${r.point}]\t${r.fitness.toFixed(3)}\tmesh ${r.mesh}`).join("\n");
  });
}

await init();
$("nabla-run").onclick = runNabla;
$("label-run").onclick = runLabel;
$("search-size").onchange = runSearch;
$("search-seed").onchange = runSearch;
$("search-canvas").onclick = (e) => {
  const size = Number($("search-size").value);
  const rect = e.target.getBoundingClientRect();
  target = [((e.clientX - rect.left) / rect.width) * size - 0.5, ((e.clientY - rect.top) / rect.height) * size - 0.5];
  runSearch();
};
runNabla();
runLabel();
runSearch();
