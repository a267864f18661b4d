"""SNN workload model: LIF neurons, networks, generators, reference interpreter.

The reference interpreter is the golden oracle: every hardware coordination
mode must reproduce its spike raster bit for bit.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

from .fixedpoint import FX_MAX, FX_MIN, SaturationCounter, fx, from_str, sat, to_str

FRAC_BITS = 16


class WorkloadError(ValueError):
    """Raised for malformed networks or workload files."""


@dataclass(frozen=True)
class NeuronParams:
    """LIF parameters, all Q16.16: membrane time constant, reset potential,
    leak conductance, firing threshold."""

    tau_m: int
    v_rst: int
    g_l: int
    v_th: int

    def __post_init__(self) -> None:
        if self.tau_m <= 0:
            raise WorkloadError("tau_m must be > 0")
        if self.g_l <= 0:
            raise WorkloadError("g_l must be > 0")
        if self.v_th <= self.v_rst:
            raise WorkloadError("v_th must be > v_rst")


@dataclass
class NeuronState:
    """Membrane potential and the per-timestep input accumulator (Q16.16)."""

    v: int
    acc: int = 0


@dataclass(frozen=True)
class Synapse:
    src: int
    dst: int
    weight: int
    delay: int


@dataclass
class Network:
    """A complete workload: neurons, synapses, external input schedule.

    ``inputs`` maps neuron id to a list of (timestep, current) pairs.
    ``layers`` is optional layer-size metadata used by the compiler to pick a
    contiguous partition for feed-forward nets.
    """

    neurons: list[tuple[NeuronParams, NeuronState]]
    synapses: list[Synapse]
    inputs: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    t_max: int = 0
    max_delay: int = 1
    layers: list[int] | None = None

    @property
    def n_neurons(self) -> int:
        return len(self.neurons)

    def validate(self) -> None:
        n = len(self.neurons)
        if self.t_max < 0:
            raise WorkloadError("t_max must be >= 0")
        if self.max_delay < 1:
            raise WorkloadError("max_delay must be >= 1")
        for s in self.synapses:
            if not (0 <= s.src < n and 0 <= s.dst < n):
                raise WorkloadError(f"synapse {s} references an unknown neuron")
            if not (1 <= s.delay <= self.max_delay):
                raise WorkloadError(f"synapse {s} has delay outside [1, {self.max_delay}]")
        for nid, events in self.inputs.items():
            if not (0 <= nid < n):
                raise WorkloadError(f"input schedule references unknown neuron {nid}")
            for t, _cur in events:
                if not (0 <= t < self.t_max):
                    raise WorkloadError(f"input for neuron {nid} at t={t} outside [0, {self.t_max})")
        if self.layers is not None:
            if sum(self.layers) != n:
                raise WorkloadError("layer sizes do not sum to the neuron count")
            if any(sz <= 0 for sz in self.layers):
                raise WorkloadError("layer sizes must be positive")


class SpikeRaster:
    """An ordered set of (neuron id, timestep) spike events."""

    __slots__ = ("_pairs",)

    def __init__(self, pairs, t_max: int | None = None):
        pairs = [(int(n), int(t)) for n, t in pairs]
        dedup = set(pairs)
        if len(dedup) != len(pairs):
            raise WorkloadError("duplicate (neuron, timestep) pair in raster")
        if t_max is not None:
            for _n, t in dedup:
                if not (0 <= t < t_max):
                    raise WorkloadError(f"raster timestep {t} outside [0, {t_max})")
        self._pairs = frozenset(dedup)

    def ordered(self) -> list[tuple[int, int]]:
        """Chronological order: by (timestep, neuron id)."""
        return sorted(self._pairs, key=lambda p: (p[1], p[0]))

    def first_divergence(self, other: "SpikeRaster") -> tuple[int, int] | None:
        """Earliest (neuron, timestep) present in exactly one raster."""
        diff = self._pairs ^ other._pairs
        if not diff:
            return None
        return min(diff, key=lambda p: (p[1], p[0]))

    def __eq__(self, other) -> bool:
        return isinstance(other, SpikeRaster) and self._pairs == other._pairs

    def __hash__(self) -> int:
        return hash(self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self._pairs

    def __iter__(self):
        return iter(self.ordered())

    def __repr__(self) -> str:  # pragma: no cover
        return f"SpikeRaster({len(self._pairs)} spikes)"


def lif_step(
    state: NeuronState, params: NeuronParams, diag: SaturationCounter | None = None
) -> tuple[NeuronState, bool]:
    """One forward-Euler LIF update with dt = one timestep.

    v' = v + (-(v - v_rst) + acc/g_l) / tau_m, then threshold-and-reset.
    Returns the new state (accumulator cleared) and whether the neuron fired.
    """
    acc0 = sat(state.acc, diag)
    drive = sat((acc0 << FRAC_BITS) // params.g_l, diag)
    leak = sat(params.v_rst - state.v, diag)
    inner = sat(leak + drive, diag)
    dv = sat((inner << FRAC_BITS) // params.tau_m, diag)
    v_new = sat(state.v + dv, diag)
    fired = v_new >= params.v_th
    if fired:
        v_new = params.v_rst
    return NeuronState(v=v_new, acc=0), fired


def lif_step_arrays(v, acc, tau_m, g_l, v_rst, v_th):
    """Vectorized LIF update, bit-identical to ``lif_step`` element-wise.

    All arrays int64 holding Q16.16 values. Returns (v_new, fired, clamps).
    """
    clamps = 0

    def _sat(x):
        nonlocal clamps
        out = np.clip(x, FX_MIN, FX_MAX)
        clamps += int(np.count_nonzero(out != x))
        return out

    acc0 = _sat(acc)
    drive = _sat((acc0 << FRAC_BITS) // g_l)
    leak = _sat(v_rst - v)
    inner = _sat(leak + drive)
    dv = _sat((inner << FRAC_BITS) // tau_m)
    v_new = _sat(v + dv)
    fired = v_new >= v_th
    v_new = np.where(fired, v_rst, v_new)
    return v_new, fired, clamps


def network_arrays(net: Network):
    """Struct-of-arrays view of neuron parameters and initial potentials."""
    n = net.n_neurons
    tau = np.empty(n, dtype=np.int64)
    g = np.empty(n, dtype=np.int64)
    vr = np.empty(n, dtype=np.int64)
    vth = np.empty(n, dtype=np.int64)
    v0 = np.empty(n, dtype=np.int64)
    for i, (p, s) in enumerate(net.neurons):
        tau[i] = p.tau_m
        g[i] = p.g_l
        vr[i] = p.v_rst
        vth[i] = p.v_th
        v0[i] = s.v
    return tau, g, vr, vth, v0


def reference_run(net: Network, diag: SaturationCounter | None = None) -> SpikeRaster:
    """Sequential time-driven interpreter; the oracle for all hardware modes.

    Spikes generated at t are consumed at t + delay (delay >= 1), so results
    do not depend on neuron iteration order within a timestep.
    """
    net.validate()
    n = net.n_neurons
    if n == 0 or net.t_max == 0:
        return SpikeRaster([])

    tau, g, vr, vth, v = network_arrays(net)

    # Adjacency: per-neuron fanout as (targets, weights, delays) arrays.
    fan_dst: list[list[int]] = [[] for _ in range(n)]
    fan_w: list[list[int]] = [[] for _ in range(n)]
    fan_d: list[list[int]] = [[] for _ in range(n)]
    for s in net.synapses:
        fan_dst[s.src].append(s.dst)
        fan_w[s.src].append(s.weight)
        fan_d[s.src].append(s.delay)
    fanout = [
        (np.array(fan_dst[i], dtype=np.int64),
         np.array(fan_w[i], dtype=np.int64),
         np.array(fan_d[i], dtype=np.int64))
        for i in range(n)
    ]

    ext: dict[int, list[tuple[int, int]]] = {}
    for nid, events in net.inputs.items():
        for t, cur in events:
            ext.setdefault(t, []).append((nid, cur))

    n_ring = net.max_delay + 1
    ring = np.zeros((n_ring, n), dtype=np.int64)
    spikes: list[tuple[int, int]] = []

    for t in range(net.t_max):
        slot = t % n_ring
        acc = ring[slot]
        for nid, cur in ext.get(t, ()):
            acc[nid] += cur
        v, fired, clamps = lif_step_arrays(v, acc, tau, g, vr, vth)
        if diag is not None:
            diag.count += clamps
        ring[slot] = 0
        fired_ids = np.nonzero(fired)[0]
        for i in fired_ids:
            spikes.append((int(i), t))
            dst, w, d = fanout[i]
            if len(dst):
                np.add.at(ring, ((t + d) % n_ring, dst), w)
    return SpikeRaster(spikes, t_max=net.t_max)


# ---------------------------------------------------------------------------
# Workload generators
# ---------------------------------------------------------------------------

#: (tau_lo, tau_hi, v_rst_lo, v_rst_hi) in real units; higher firing rates
#: come from faster membranes and reset potentials closer to threshold.
RateKnobs = tuple[float, float, float, float]

_V_TH = 16.0
_BASE_KNOBS: RateKnobs = (2.0, 4.0, 0.0, 4.0)


def rate_knobs_for_level(level: float) -> RateKnobs:
    """Map a scalar in [0, 1] to parameter ranges with monotone firing rate."""
    if not (0.0 <= level <= 1.0):
        raise WorkloadError("rate level must be in [0, 1]")
    tau_hi = 4.0 - 1.8 * level
    tau_lo = max(1.0, tau_hi - 1.0)
    vr_lo = 5.0 * level
    vr_hi = vr_lo + 2.5
    return (tau_lo, tau_hi, vr_lo, vr_hi)


def gen_synthetic(
    n_neurons: int,
    n_synapses: int,
    frac_inhibitory: float = 0.2,
    rate_knobs: RateKnobs | None = None,
    seed: int = 0,
    *,
    t_max: int = 100,
    max_delay: int = 2,
    input_rate: float = 0.05,
    input_amp: float = 18.0,
) -> Network:
    """Random recurrent network with excitatory/inhibitory populations and
    Poisson external input. Deterministic in the seed."""
    if n_neurons < 0 or n_synapses < 0:
        raise WorkloadError("counts must be non-negative")
    if n_neurons == 0:
        if n_synapses:
            raise WorkloadError("synapses require neurons")
        return Network(neurons=[], synapses=[], inputs={}, t_max=t_max, max_delay=max_delay)
    if n_synapses > n_neurons * n_neurons:
        raise WorkloadError("n_synapses exceeds n_neurons**2")
    if not (0.0 <= frac_inhibitory <= 1.0):
        raise WorkloadError("frac_inhibitory must be in [0, 1]")

    knobs = rate_knobs_for_level(0.5) if rate_knobs is None else rate_knobs
    tau_lo, tau_hi, vr_lo, vr_hi = knobs
    rng = random.Random(seed)
    v_th = fx(_V_TH)

    neurons = []
    inhibitory = []
    for i in range(n_neurons):
        tau = fx(rng.uniform(tau_lo, tau_hi))
        vr = fx(min(rng.uniform(vr_lo, vr_hi), _V_TH - 2.0))
        neurons.append((NeuronParams(tau_m=tau, v_rst=vr, g_l=fx(1.0), v_th=v_th),
                        NeuronState(v=vr)))
        inhibitory.append(rng.random() < frac_inhibitory)

    synapses = []
    for _ in range(n_synapses):
        src = rng.randrange(n_neurons)
        dst = rng.randrange(n_neurons)
        mag = fx(rng.uniform(1.0, 4.0))
        w = -mag if inhibitory[src] else mag
        synapses.append(Synapse(src=src, dst=dst, weight=w, delay=rng.randint(1, max_delay)))

    amp = fx(input_amp)
    inputs: dict[int, list[tuple[int, int]]] = {}
    for i in range(n_neurons):
        events = [(t, amp) for t in range(t_max) if rng.random() < input_rate]
        if events:
            inputs[i] = events

    net = Network(neurons=neurons, synapses=synapses, inputs=inputs,
                  t_max=t_max, max_delay=max_delay)
    net.validate()
    return net


def gen_layered(
    layer_sizes: list[int],
    fanin: int,
    seed: int = 0,
    *,
    t_max: int = 100,
    max_delay: int = 1,
    input_rate: float = 0.1,
    input_amp: float = 40.0,
    weight_scale: float = 7.0,
    background_rate: float = 0.05,
    background_amp: float = 12.0,
) -> Network:
    """Feed-forward network; each neuron draws ``fanin`` random presynaptic
    neurons from the previous layer. Acyclic by construction.

    The input layer gets strong Poisson drive; deeper layers get a weak
    background that keeps them near threshold, so synaptic input decides."""
    if len(layer_sizes) < 2:
        raise WorkloadError("need at least 2 layers")
    if any(sz <= 0 for sz in layer_sizes):
        raise WorkloadError("layer sizes must be positive")
    if fanin < 1 or fanin > min(layer_sizes[:-1]):
        raise WorkloadError("fanin must be in [1, smallest source layer]")

    rng = random.Random(seed)
    v_th = fx(_V_TH)
    params = NeuronParams(tau_m=fx(2.0), v_rst=fx(0.0), g_l=fx(1.0), v_th=v_th)
    n_total = sum(layer_sizes)
    neurons = [(params, NeuronState(v=0)) for _ in range(n_total)]

    # Weights sized so a modest fraction of a layer firing propagates.
    w_mid = _V_TH * weight_scale / fanin
    starts = [0]
    for sz in layer_sizes:
        starts.append(starts[-1] + sz)

    synapses = []
    for li in range(1, len(layer_sizes)):
        prev_lo, prev_hi = starts[li - 1], starts[li]
        for dst in range(starts[li], starts[li + 1]):
            srcs = rng.sample(range(prev_lo, prev_hi), fanin)
            for src in sorted(srcs):
                w = fx(rng.uniform(0.7 * w_mid, 1.3 * w_mid))
                synapses.append(Synapse(src=src, dst=dst, weight=w,
                                        delay=rng.randint(1, max_delay)))

    amp = fx(input_amp)
    bg_amp = fx(background_amp)
    inputs: dict[int, list[tuple[int, int]]] = {}
    for i in range(layer_sizes[0]):
        events = [(t, amp) for t in range(t_max) if rng.random() < input_rate]
        if events:
            inputs[i] = events
    for i in range(layer_sizes[0], n_total):
        events = [(t, bg_amp) for t in range(t_max) if rng.random() < background_rate]
        if events:
            inputs[i] = events

    net = Network(neurons=neurons, synapses=synapses, inputs=inputs,
                  t_max=t_max, max_delay=max_delay, layers=list(layer_sizes))
    net.validate()
    return net


# ---------------------------------------------------------------------------
# Workload file format (JSON, fixed-point values as exact decimal strings)
# ---------------------------------------------------------------------------


def network_to_dict(net: Network) -> dict:
    doc = {
        "neurons": [
            {
                "tau_m": to_str(p.tau_m),
                "v_rst": to_str(p.v_rst),
                "g_l": to_str(p.g_l),
                "v_th": to_str(p.v_th),
                "v0": to_str(s.v),
            }
            for p, s in net.neurons
        ],
        "synapses": [
            {"src": s.src, "dst": s.dst, "weight": to_str(s.weight), "delay": s.delay}
            for s in net.synapses
        ],
        "inputs": [
            {"neuron": nid, "timestep": t, "current": to_str(cur)}
            for nid in sorted(net.inputs)
            for t, cur in net.inputs[nid]
        ],
        "t_max": net.t_max,
        "max_delay": net.max_delay,
    }
    if net.layers is not None:
        doc["layers"] = list(net.layers)
    return doc


def network_from_dict(doc: dict) -> Network:
    try:
        neurons = [
            (
                NeuronParams(
                    tau_m=from_str(nd["tau_m"]),
                    v_rst=from_str(nd["v_rst"]),
                    g_l=from_str(nd["g_l"]),
                    v_th=from_str(nd["v_th"]),
                ),
                NeuronState(v=from_str(nd["v0"])),
            )
            for nd in doc["neurons"]
        ]
        synapses = [
            Synapse(src=sd["src"], dst=sd["dst"], weight=from_str(sd["weight"]),
                    delay=sd["delay"])
            for sd in doc["synapses"]
        ]
        inputs: dict[int, list[tuple[int, int]]] = {}
        for ev in doc["inputs"]:
            inputs.setdefault(ev["neuron"], []).append((ev["timestep"], from_str(ev["current"])))
        net = Network(
            neurons=neurons,
            synapses=synapses,
            inputs=inputs,
            t_max=doc["t_max"],
            max_delay=doc["max_delay"],
            layers=list(doc["layers"]) if "layers" in doc else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WorkloadError):
            raise
        raise WorkloadError(f"malformed workload document: {exc}") from exc
    net.validate()
    return net


def save_workload(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(network_to_dict(net), f, indent=1, sort_keys=True)
        f.write("\n")


def load_workload(path) -> Network:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise WorkloadError(f"not valid JSON: {exc}") from exc
    return network_from_dict(doc)
