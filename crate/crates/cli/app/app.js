// Canvas client: a pure consumer of the REST and nc-events/1 WebSocket API.
"use strict";

const state = { project: null, approved: false, run: null, graph: null, selected: null, breakpoints: new Set(), socket: null, seq: -1 };
const $ = (id) => document.getElementById(id);

async function api(method, path, body) {
  const res = await fetch(path, {
    method,
    headers: body ? { "content-type": "application/json" } : {},
    body: body ? JSON.stringify(body) : undefined,
  });
  const type = res.headers.get("content-type") || "";
  const data = type.includes("json") ? await res.json() : await res.text();
  if (!res.ok) {
    const e = data.error || { message: String(data) };
    $("error").textContent = `${e.code || res.status}: ${e.message}` + (e.details ? "\n" + JSON.stringify(e.details) : "");
    throw new Error(e.message);
  }
  $("error").textContent = "";
  return data;
}

function button(label, onclick) {
  const b = document.createElement("button");
  b.textContent = label;
  b.onclick = onclick;
  return b;
}

async function loadProjects() {
  const list = await api("GET", "/projects");
  const el = $("project-list");
  el.replaceChildren(...list.map((p) => {
    const d = document.createElement("div");
    d.className = "node";
    d.textContent = `${p.name} (${p.compiled})`;
    d.onclick = () => openProject(p.id);
    return d;
  }));
}

async function openProject(id) {
  state.project = id;
  state.approved = false;
  $("narrative").textContent = await api("GET", `/projects/${id}/narrative`);
  $("toolbar").replaceChildren(
    button("Compile", async () => { await api("POST", `/projects/${id}/compile`); loadProjects(); }),
    button("Approve narrative", () => { state.approved = true; renderToolbar(); }),
  );
  loadRuns();
}

function renderToolbar() {
  const id = state.project;
  $("toolbar").replaceChildren(
    button("Compile", async () => { await api("POST", `/projects/${id}/compile`); loadProjects(); }),
    button("Run", async () => {
      const r = await api("POST", `/projects/${id}/runs`, { breakpoints: [...state.breakpoints] });
      openRun(r.run_id);
      loadRuns();
    }),
  );
}

async function loadRuns() {
  if (!state.project) return;
  const runs = await api("GET", `/projects/${state.project}/runs`);
  $("run-list").replaceChildren(...runs.map((r) => {
    const d = document.createElement("div");
    d.className = "node";
    d.textContent = `${r.run_id.slice(0, 8)} ${r.phase} ${r.origin.kind}`;
    d.onclick = () => openRun(r.run_id);
    return d;
  }));
}

async function openRun(runId) {
  state.run = runId;
  state.graph = await api("GET", `/runs/${runId}/graph`);
  state.seq = -1;
  renderGraph();
  if (state.socket) state.socket.close();
  const proto = location.protocol === "https:" ? "wss" : "ws";
  const socket = new WebSocket(`${proto}://${location.host}/runs/${runId}/ws`, "nc-events/1");
  socket.onmessage = (m) => applyEvent(JSON.parse(m.data));
  state.socket = socket;
}

function applyEvent(e) {
  if (e.seq <= state.seq) return;
  state.seq = e.seq;
  if (e.kind === "StatusChanged") {
    const addr = e.payload.address;
    for (const n of state.graph.nodes) {
      if (!addr.startsWith(n.flow) || !(addr === n.flow || addr[n.flow.length] === "[")) continue;
      const inst = n.instances.find((i) => i.address === addr);
      if (e.payload.status === null) n.instances = n.instances.filter((i) => i.address !== addr);
      else if (inst) inst.status = e.payload.status;
      else n.instances.push({ address: addr, status: e.payload.status });
    }
    renderGraph();
  } else if (e.kind === "RunFinished") {
    loadRuns();
  }
}

function renderGraph() {
  const g = state.graph;
  const rows = [];
  for (const n of g.nodes) {
    const head = document.createElement("div");
    head.style.marginLeft = `${(n.depth - 1) * 16}px`;
    const bp = document.createElement("input");
    bp.type = "checkbox";
    bp.checked = state.breakpoints.has(n.flow);
    bp.onchange = () => (bp.checked ? state.breakpoints.add(n.flow) : state.breakpoints.delete(n.flow));
    head.append(bp, ` ${n.flow} {${n.concept}} ${n.kind}${n.iterates ? " loop:" + n.iterates : ""}`);
    rows.push(head);
    for (const i of n.instances) {
      const d = document.createElement("div");
      d.className = `node ${i.status}`;
      d.style.marginLeft = `${(n.depth - 1) * 16 + 20}px`;
      d.textContent = `${i.address} ${i.status}`;
      d.onclick = () => selectNode(i.address);
      rows.push(d);
    }
  }
  $("graph").replaceChildren(...rows);
}

async function selectNode(addr, view = "table") {
  state.selected = addr;
  const base = `/runs/${state.run}/checkpoints/${encodeURIComponent(addr)}`;
  const t = await api("GET", `${base}/tensor?view=${view}`);
  $("tensor").textContent = t.rendered;
  $("editor").value = JSON.stringify(t.reference, null, 2);
  $("tensor-tools").replaceChildren(...["table", "list", "json"].map((v) => button(v, () => selectNode(addr, v))));
  $("detail-tools").replaceChildren(
    button("Override", async () => {
      let value;
      try { value = JSON.parse($("editor").value); } catch (err) { $("error").textContent = `invalid JSON: ${err.message}`; return; }
      const o = await api("POST", `${base}/override`, { value });
      await openRun(o.run_id);
      loadRuns();
    }),
    button("Resume", async () => { await api("POST", `/runs/${state.run}/resume`); }),
    button("Fork", async () => { const f = await api("POST", `${base}/fork`); await openRun(f.run_id); loadRuns(); }),
  );
}

$("trace-load").onclick = async () => {
  if (!state.run) return;
  const q = new URLSearchParams({ from: $("trace-from").value, to: $("trace-to").value });
  const entries = await api("GET", `/runs/${state.run}/trace/${$("trace-kind").value}?${q}`);
  $("trace").textContent = entries.map((e) => JSON.stringify(e, null, 2)).join("\n");
};

loadProjects();
