import init, { simulate, lowerBound, comparePolicies } from "./pkg/pdsched_web.js";

const $ = (id) => document.getElementById(id);

function scenario() {
  return JSON.stringify({
    count: Number($("count").value),
    clients: Number($("clients").value),
    seed: Number($("seed").value),
    policy: $("policy").value,
    mode: $("mode").value,
    steal: $("steal").value === "true",
  });
}

function table(rows, cols) {
  const head = cols.map((c) => `<th>${c}</th>`).join("");
  const body = rows.map((r) => `<tr>${cols.map((c) => `<td>${r[c]}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${head}</tr>${body}</table>`;
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

const fmt = (x, d) => x.toFixed(d);

$("simulate").onclick = guarded(() => {
  const r = JSON.parse(simulate(scenario()));
  const m = r.metrics;
  $("summary").innerHTML = table(
    [{ policy: r.policy, bins: r.bins, "makespan s": fmt(m.makespan_s, 2), utilization: fmt(m.utilization, 4), "tokens/s": fmt(m.generation_speed, 1) }],
    ["policy", "bins", "makespan s", "utilization", "tokens/s"],
  );
  $("gantt").innerHTML = r.svg;
});

$("bound").onclick = guarded(() => {
  const b = JSON.parse(lowerBound(scenario()));
  $("summary").innerHTML = table(
    [{ "prefill s": fmt(b.prefill_s, 2), "decode s": fmt(b.decode_s, 2), "total s": fmt(b.total_s, 2), proven: b.exact ? "yes" : "no (heuristic packing)" }],
    ["prefill s", "decode s", "total s", "proven"],
  );
});

$("compare").onclick = guarded(() => {
  const rows = JSON.parse(comparePolicies(scenario())).map((r) => ({
    policy: r.policy,
    "makespan s": fmt(r.makespan_s, 2),
    utilization: fmt(r.utilization, 4),
    "tokens/s": fmt(r.generation_speed, 1),
  }));
  $("summary").innerHTML = table(rows, ["policy", "makespan s", "utilization", "tokens/s"]);
});

await init();
