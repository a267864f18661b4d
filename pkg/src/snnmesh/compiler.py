"""Compile a Network onto logic cores: partitioning, dependency extraction
with reverse-index routing for control packets, and mesh placement."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

from .fixedpoint import from_str, to_str
from .model import Network, NeuronParams, NeuronState, Synapse

MAX_DEPS_PER_CORE = 512


class CompileError(ValueError):
    """Raised when a network cannot be compiled under the given limits."""


@dataclass(frozen=True)
class Capacity:
    max_neurons: int = 4096
    max_synapses: int = 262144
    max_deps: int = MAX_DEPS_PER_CORE


@dataclass(frozen=True)
class FanoutEntry:
    """One outgoing synapse: route to ``dst_core`` and activate the remote
    synapse row ``synapse_id`` after ``delay`` timesteps."""

    dst_core: int
    synapse_id: int
    weight: int
    delay: int


@dataclass
class LogicCore:
    id: int
    neuron_ids: list[int]
    # local source index -> outgoing synapses
    fanout: dict[int, list[FanoutEntry]] = field(default_factory=dict)
    # incoming synapse table: row id -> (local target index, weight)
    in_synapses: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class DepGraph:
    """Per-core pre/post dependency lists plus the reverse row indices each
    core stamps onto its outgoing control packets."""

    pre: list[list[int]]
    post: list[list[int]]

    @property
    def n_cores(self) -> int:
        return len(self.pre)

    def edges(self) -> list[tuple[int, int]]:
        return [(a, b) for a in range(self.n_cores) for b in self.post[a]]

    def finish_routes(self, core: int) -> list[tuple[int, int]]:
        """(post-dep core, row in its pre table) for FINISH packets."""
        return [(b, self.pre[b].index(core)) for b in self.post[core]]

    def start_routes(self, core: int) -> list[tuple[int, int]]:
        """(pre-dep core, row in its post table) for START packets."""
        return [(a, self.post[a].index(core)) for a in self.pre[core]]


@dataclass
class Placement:
    coords: list[tuple[int, int]]  # core id -> (x, y)
    grid: tuple[int, int]

    def __getitem__(self, core: int) -> tuple[int, int]:
        return self.coords[core]


@dataclass
class CompiledProgram:
    """Everything a simulation needs: per-core slices, routing tables,
    dependency graph, placement, and the workload's input schedule."""

    cores: list[LogicCore]
    dep_graph: DepGraph
    placement: Placement
    grid: tuple[int, int]
    neuron_params: list[tuple[NeuronParams, int]]  # global id -> (params, v0)
    inputs: dict[int, list[tuple[int, int]]]
    t_max: int
    max_delay: int

    @property
    def n_cores(self) -> int:
        return len(self.cores)

    @property
    def n_neurons(self) -> int:
        return len(self.neuron_params)


def _assign_round_robin(n_neurons: int, n_cores: int) -> list[int]:
    return [i % n_cores for i in range(n_neurons)]


def _assign_layered(layers: list[int], n_cores: int) -> list[int]:
    """Contiguous ranges: cores are shared out to layers by size (largest
    remainder), then each layer is split into equal chunks."""
    total = sum(layers)
    quotas = [sz * n_cores / total for sz in layers]
    counts = [max(1, int(q)) for q in quotas]
    while sum(counts) > n_cores:
        # shrink the layer with the most cores relative to its quota
        shrinkable = [i for i in range(len(layers)) if counts[i] > 1]
        if not shrinkable:
            raise CompileError(f"cannot fit {len(layers)} layers on {n_cores} cores")
        j = max(shrinkable, key=lambda i: (counts[i] - quotas[i], counts[i]))
        counts[j] -= 1
    order = sorted(range(len(layers)), key=lambda i: quotas[i] - counts[i], reverse=True)
    k = 0
    while sum(counts) < n_cores:
        counts[order[k % len(order)]] += 1
        k += 1

    assign = []
    core = 0
    for li, sz in enumerate(layers):
        c = counts[li]
        base, extra = divmod(sz, c)
        for chunk in range(c):
            chunk_sz = base + (1 if chunk < extra else 0)
            assign.extend([core] * chunk_sz)
            core += 1
    return assign


def partition(
    net: Network,
    n_cores: int,
    capacity: Capacity = Capacity(),
    assignment: list[int] | None = None,
) -> list[LogicCore]:
    """Split a network's neurons over logic cores and build routing tables.

    Layered networks get contiguous per-layer chunks; others are dealt
    round-robin. An explicit neuron -> core ``assignment`` overrides both.
    """
    net.validate()
    if n_cores < 1:
        raise CompileError("need at least one core")
    if net.n_neurons > n_cores * capacity.max_neurons:
        raise CompileError(
            f"{net.n_neurons} neurons cannot fit {n_cores} cores of "
            f"{capacity.max_neurons}"
        )

    if assignment is not None:
        if len(assignment) != net.n_neurons:
            raise CompileError("assignment length must equal the neuron count")
        if any(not (0 <= c < n_cores) for c in assignment):
            raise CompileError("assignment references an unknown core")
        assign = list(assignment)
    elif net.layers is not None:
        assign = _assign_layered(net.layers, n_cores)
    else:
        assign = _assign_round_robin(net.n_neurons, n_cores)

    cores = [LogicCore(id=c, neuron_ids=[]) for c in range(n_cores)]
    local_idx = [0] * net.n_neurons
    for nid, c in enumerate(assign):
        local_idx[nid] = len(cores[c].neuron_ids)
        cores[c].neuron_ids.append(nid)

    for c in cores:
        if len(c.neuron_ids) > capacity.max_neurons:
            raise CompileError(
                f"core {c.id} holds {len(c.neuron_ids)} neurons, "
                f"capacity {capacity.max_neurons}"
            )

    syn_per_core = [0] * n_cores
    for s in net.synapses:
        src_core = assign[s.src]
        dst_core = assign[s.dst]
        syn_id = len(cores[dst_core].in_synapses)
        cores[dst_core].in_synapses.append((local_idx[s.dst], s.weight))
        entry = FanoutEntry(dst_core=dst_core, synapse_id=syn_id,
                            weight=s.weight, delay=s.delay)
        cores[src_core].fanout.setdefault(local_idx[s.src], []).append(entry)
        syn_per_core[dst_core] += 1
        if syn_per_core[dst_core] > capacity.max_synapses:
            raise CompileError(
                f"core {dst_core} exceeds its synapse capacity "
                f"{capacity.max_synapses}"
            )
    return cores


def extract_deps(cores: list[LogicCore], capacity: Capacity = Capacity()) -> DepGraph:
    """Dependency edge A -> B iff some synapse crosses from A to B (A != B).
    Row indices are assigned by ascending neighbour core id."""
    n = len(cores)
    out_sets: list[set[int]] = [set() for _ in range(n)]
    for c in cores:
        for entries in c.fanout.values():
            for e in entries:
                if e.dst_core != c.id:
                    out_sets[c.id].add(e.dst_core)
    pre: list[list[int]] = [[] for _ in range(n)]
    post: list[list[int]] = [sorted(s) for s in out_sets]
    for a in range(n):
        for b in post[a]:
            pre[b].append(a)
    pre = [sorted(p) for p in pre]
    for c in range(n):
        total = len(pre[c]) + len(post[c])
        if total > capacity.max_deps:
            raise CompileError(
                f"core {c} has {total} dependencies, hardware table holds "
                f"{capacity.max_deps}"
            )
    return DepGraph(pre=pre, post=post)


def map_plain(cores: list[LogicCore], grid: tuple[int, int]) -> Placement:
    """Row-major: logic core i at (i mod W, i div W)."""
    w, h = grid
    if len(cores) > w * h:
        raise CompileError(f"{len(cores)} cores exceed the {w}x{h} grid")
    coords = [(i % w, i // w) for i in range(len(cores))]
    return Placement(coords=coords, grid=grid)


def hilbert_index_to_xy(side: int, d: int) -> tuple[int, int]:
    """Standard Hilbert curve index -> (x, y) on a side x side grid."""
    x = y = 0
    t = d
    s = 1
    while s < side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def map_hilbert(cores: list[LogicCore], grid: tuple[int, int]) -> Placement:
    """Logic core i at the i-th cell of the Hilbert curve. Requires a square
    power-of-two grid; anything else falls back to plain with a warning."""
    w, h = grid
    if len(cores) > w * h:
        raise CompileError(f"{len(cores)} cores exceed the {w}x{h} grid")
    if w != h or w < 1 or (w & (w - 1)) != 0:
        warnings.warn(
            f"hilbert mapping needs a square power-of-two grid, got {w}x{h}; "
            "falling back to plain",
            stacklevel=2,
        )
        return map_plain(cores, grid)
    coords = [hilbert_index_to_xy(w, i) for i in range(len(cores))]
    return Placement(coords=coords, grid=grid)


def avg_dep_distance(placement: Placement, graph: DepGraph) -> float:
    """Mean Manhattan hop distance over all dependency edges (0.0 if none)."""
    edges = graph.edges()
    if not edges:
        return 0.0
    total = 0
    for a, b in edges:
        xa, ya = placement[a]
        xb, yb = placement[b]
        total += abs(xa - xb) + abs(ya - yb)
    return total / len(edges)


def compile_network(
    net: Network,
    grid: tuple[int, int],
    mapping: str = "plain",
    capacity: Capacity = Capacity(),
    n_cores: int | None = None,
    assignment: list[int] | None = None,
) -> CompiledProgram:
    """Full pipeline: partition, extract dependencies, place on the mesh."""
    w, h = grid
    if n_cores is None:
        n_cores = w * h
    cores = partition(net, n_cores, capacity, assignment=assignment)
    graph = extract_deps(cores, capacity)
    if mapping == "plain":
        placement = map_plain(cores, grid)
    elif mapping == "hilbert":
        placement = map_hilbert(cores, grid)
    else:
        raise CompileError(f"unknown mapping {mapping!r}")
    return CompiledProgram(
        cores=cores,
        dep_graph=graph,
        placement=placement,
        grid=grid,
        neuron_params=[(p, s.v) for p, s in net.neurons],
        inputs={nid: list(evs) for nid, evs in net.inputs.items()},
        t_max=net.t_max,
        max_delay=net.max_delay,
    )


def exchange_with_core0(net: Network, assignment: list[int], fraction: float,
                        seed: int = 0) -> list[int]:
    """Swap a fraction of core 0's neurons with neurons of the other cores,
    round-robin, to manufacture dependency cycles through core 0."""
    import random as _random

    if not (0.0 <= fraction <= 1.0):
        raise CompileError("exchange fraction must be in [0, 1]")
    n_cores = max(assignment) + 1 if assignment else 0
    if n_cores < 2 or fraction == 0.0:
        return list(assignment)
    rng = _random.Random(seed)
    by_core: dict[int, list[int]] = {}
    for nid, c in enumerate(assignment):
        by_core.setdefault(c, []).append(nid)
    k = max(1, int(fraction * len(by_core.get(0, []))))
    k = min(k, len(by_core.get(0, [])))
    mine = rng.sample(by_core[0], k)
    new_assign = list(assignment)
    partners = [c for c in range(1, n_cores) if by_core.get(c)]
    if not partners:
        return new_assign
    for i, nid in enumerate(mine):
        partner_core = partners[i % len(partners)]
        partner_nid = rng.choice(by_core[partner_core])
        by_core[partner_core].remove(partner_nid)
        new_assign[nid], new_assign[partner_nid] = partner_core, 0
    return new_assign


# ---------------------------------------------------------------------------
# Compiled-program file format
# ---------------------------------------------------------------------------


def program_to_dict(prog: CompiledProgram) -> dict:
    return {
        "grid": list(prog.grid),
        "t_max": prog.t_max,
        "max_delay": prog.max_delay,
        "cores": [
            {
                "id": c.id,
                "neuron_ids": list(c.neuron_ids),
                "fanout": {
                    str(local): [
                        {"dst_core": e.dst_core, "synapse_id": e.synapse_id,
                         "weight": to_str(e.weight), "delay": e.delay}
                        for e in entries
                    ]
                    for local, entries in sorted(c.fanout.items())
                },
                "in_synapses": [
                    {"target": tgt, "weight": to_str(w)} for tgt, w in c.in_synapses
                ],
            }
            for c in prog.cores
        ],
        "dep_graph": {"pre": prog.dep_graph.pre, "post": prog.dep_graph.post},
        "placement": [list(xy) for xy in prog.placement.coords],
        "neurons": [
            {"tau_m": to_str(p.tau_m), "v_rst": to_str(p.v_rst),
             "g_l": to_str(p.g_l), "v_th": to_str(p.v_th), "v0": to_str(v0)}
            for p, v0 in prog.neuron_params
        ],
        "inputs": [
            {"neuron": nid, "timestep": t, "current": to_str(cur)}
            for nid in sorted(prog.inputs)
            for t, cur in prog.inputs[nid]
        ],
    }


def program_from_dict(doc: dict) -> CompiledProgram:
    try:
        cores = [
            LogicCore(
                id=cd["id"],
                neuron_ids=list(cd["neuron_ids"]),
                fanout={
                    int(local): [
                        FanoutEntry(dst_core=e["dst_core"], synapse_id=e["synapse_id"],
                                    weight=from_str(e["weight"]), delay=e["delay"])
                        for e in entries
                    ]
                    for local, entries in cd["fanout"].items()
                },
                in_synapses=[(e["target"], from_str(e["weight"]))
                             for e in cd["in_synapses"]],
            )
            for cd in doc["cores"]
        ]
        graph = DepGraph(pre=[list(p) for p in doc["dep_graph"]["pre"]],
                         post=[list(p) for p in doc["dep_graph"]["post"]])
        grid = tuple(doc["grid"])
        placement = Placement(coords=[tuple(xy) for xy in doc["placement"]], grid=grid)
        neuron_params = [
            (NeuronParams(tau_m=from_str(nd["tau_m"]), v_rst=from_str(nd["v_rst"]),
                          g_l=from_str(nd["g_l"]), v_th=from_str(nd["v_th"])),
             from_str(nd["v0"]))
            for nd in doc["neurons"]
        ]
        inputs: dict[int, list[tuple[int, int]]] = {}
        for ev in doc["inputs"]:
            inputs.setdefault(ev["neuron"], []).append((ev["timestep"], from_str(ev["current"])))
        return CompiledProgram(
            cores=cores, dep_graph=graph, placement=placement, grid=grid,
            neuron_params=neuron_params, inputs=inputs,
            t_max=doc["t_max"], max_delay=doc["max_delay"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CompileError(f"malformed program document: {exc}") from exc


def save_program(prog: CompiledProgram, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(program_to_dict(prog), f, indent=1, sort_keys=True)
        f.write("\n")


def load_program(path) -> CompiledProgram:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise CompileError(f"not valid JSON: {exc}") from exc
    return program_from_dict(doc)


def network_for_program(prog: CompiledProgram) -> Network:
    """Reconstruct a Network view (without synapse list) for validation."""
    neurons = [(p, NeuronState(v=v0)) for p, v0 in prog.neuron_params]
    synapses = []
    for c in prog.cores:
        for local, entries in c.fanout.items():
            src = c.neuron_ids[local]
            for e in entries:
                dst_core = prog.cores[e.dst_core]
                tgt_local, w = dst_core.in_synapses[e.synapse_id]
                synapses.append(Synapse(src=src, dst=dst_core.neuron_ids[tgt_local],
                                        weight=w, delay=e.delay))
    return Network(neurons=neurons, synapses=synapses,
                   inputs={k: list(v) for k, v in prog.inputs.items()},
                   t_max=prog.t_max, max_delay=prog.max_delay)
