"""The neuromorphic core: compute engine over a neuron slice, circular spike
buffer, dependency tables, and the per-mode forwarding machinery (barrier,
speculative with rollback, dependency-driven)."""

from __future__ import annotations

import numpy as np

from .model import lif_step_arrays
from .noc import (
    DEP,
    FLAG_FINISH,
    FLAG_START,
    SPIKE,
    DepBody,
    Packet,
    SpikeBody,
)

MODE_SYNC = "sync"
MODE_SE = "se"
MODE_DEPASYNC = "depasync"
MODES = (MODE_SYNC, MODE_SE, MODE_DEPASYNC)

PHASE_READY = "READY"
PHASE_COMPUTING = "COMPUTING"
PHASE_WAITING = "WAITING"
PHASE_DONE = "DONE"


class ProtocolFault(RuntimeError):
    """A packet violated the protocol (bad dep id, impossible rollback)."""


class DependencyTables:
    """Last FINISH seen per pre-dependency and last START per post-dependency.
    Entries only ever grow; updates take the max."""

    __slots__ = ("pre_finish", "post_start")

    def __init__(self, n_pre: int, n_post: int):
        # Nothing has finished yet; everyone is allowed to start t=0.
        self.pre_finish = [-1] * n_pre
        self.post_start = [0] * n_post

    def update(self, flag: int, dep_id: int, timestep: int) -> None:
        table = self.pre_finish if flag == FLAG_FINISH else self.post_start
        if not (0 <= dep_id < len(table)):
            raise ProtocolFault(
                f"dep id {dep_id} outside table of length {len(table)}"
            )
        if timestep > table[dep_id]:
            table[dep_id] = timestep


def advance_condition(tables: DependencyTables, t_cur: int, m: int) -> bool:
    """May the core begin timestep t_cur + 1?

    Requires every pre-dependency to have finished t_cur (its spikes have
    provably landed) and every post-dependency to have started at least
    t_cur - m + 2 (it still has buffer room for spikes we will emit).
    """
    if m < 1:
        raise ValueError("window m must be >= 1")
    for t in tables.pre_finish:
        if t < t_cur:
            return False
    bound = t_cur - m + 1
    for t in tables.post_start:
        if t <= bound:
            return False
    return True


def on_dep_packet(tables: DependencyTables, pkt: Packet) -> DependencyTables:
    """Apply a START/FINISH notification; monotone max per entry."""
    body = pkt.body
    tables.update(body.flag, body.dep_id, body.timestep)
    return tables


class CircularSpikeBuffer:
    """Ring of per-neuron accumulator rows, one slot per buffered timestep.

    The head row holds the timestep currently feeding the compute engine.
    ``consume`` reads and clears it; after that, a write addressed exactly
    one ring revolution ahead may recycle the head row (the rotation will
    re-label it), while a write for the consumed timestep itself is late and
    trips the safety counter.
    """

    __slots__ = ("n_slot", "n_local", "slots", "head", "head_t", "consumed",
                 "violations")

    def __init__(self, n_slot: int, n_local: int):
        if n_slot < 1:
            raise ValueError("need at least one slot")
        self.n_slot = n_slot
        self.n_local = n_local
        self.slots = np.zeros((n_slot, max(n_local, 1)), dtype=np.int64)
        self.head = 0
        self.head_t = 0
        self.consumed = False
        self.violations = 0

    def write(self, consuming_t: int, local_idx: int, weight: int) -> bool:
        """Accumulate ``weight`` into the slot for ``consuming_t``.
        Returns False (and counts a violation) if the slot is unsafe."""
        off = consuming_t - self.head_t
        if off < 0 or (off == 0 and self.consumed):
            self.violations += 1
            return False
        if off >= self.n_slot:
            if off == self.n_slot and self.consumed:
                # One revolution ahead: the head row was already read out and
                # will represent exactly this timestep after rotation.
                off = 0
            else:
                self.violations += 1
                return False
        self.slots[(self.head + off) % self.n_slot][local_idx] += weight
        return True

    def consume(self) -> np.ndarray:
        """Read out the head row for the current timestep and clear it."""
        row = self.slots[self.head].copy()
        self.slots[self.head][:] = 0
        self.consumed = True
        return row

    def rotate(self) -> None:
        """Advance one slot at timestep end. An unconsumed head is discarded
        (zeroed); a consumed head keeps any early writes it has accepted for
        the timestep it now represents."""
        if not self.consumed:
            self.slots[self.head][:] = 0
        self.head = (self.head + 1) % self.n_slot
        self.head_t += 1
        self.consumed = False


class NeuromorphicCore:
    """One core's slice of the network plus its forwarding state."""

    def __init__(self, cid, coord, neuron_ids, tau, g, vr, vth, v0,
                 in_syn_target, in_syn_weight, fanout_remote, fanout_local,
                 external, n_pre, n_post, start_routes, finish_routes,
                 mode, m, max_delay, t_max, c_update, c_spike):
        self.cid = cid
        self.coord = coord
        self.neuron_ids = neuron_ids
        self.n_local = len(neuron_ids)
        self.tau, self.g, self.vr, self.vth = tau, g, vr, vth
        self.v = v0.copy()
        self.in_syn_target = in_syn_target
        self.in_syn_weight = in_syn_weight
        # per local neuron: [(dst_core, dst_xy, synapse_id, delay)]
        self.fanout_remote = fanout_remote
        # per local neuron: [(target_local, weight, delay)]
        self.fanout_local = fanout_local
        self.external = external  # t -> (idx array, current array)
        self.start_routes = start_routes    # [(pre core, dst_xy, dep_id)]
        self.finish_routes = finish_routes  # [(post core, dst_xy, dep_id)]
        self.mode = mode
        self.m = m
        self.t_max = t_max
        self.c_update = c_update
        self.c_spike = c_spike

        self.tables = DependencyTables(n_pre, n_post)
        n_slot = max_delay + m - 1
        self.buffer = CircularSpikeBuffer(n_slot, self.n_local)
        self.vbuf: dict[int, np.ndarray] = {}  # speculative mode accumulators

        self.t_cur = -1
        self.phase = PHASE_READY if t_max > 0 else PHASE_DONE
        self.gen = 0  # invalidates in-flight completion events after rollback
        self.computing: tuple | None = None  # (t, start_cycle, v_new, fired, cost)

        self.raster: dict[int, list[int]] = {}
        self.counters = {
            "neuron_updates": 0,
            "rollback_updates": 0,
            "synapse_acc": 0,
            "buffer_reads": 0,
            "buffer_writes": 0,
            "scheduler_events": 0,
            "saturations": 0,
        }
        self.busy_cycles = 0
        self.rollback_cycles = 0
        self.rollbacks = 0

        # speculative-mode bookkeeping
        self.checkpoints: dict[int, np.ndarray] = {0: self.v.copy()}
        self.rcv_log: list[tuple[int, int, int, int]] = []  # (consuming, tgt, w, self_gen)
        self.sent_log: dict[int, list[Packet]] = {}
        self.frontier = -1  # highest timestep ever completed
        self.epoch_start = 0
        self.epoch_base_vbuf: dict[int, np.ndarray] = {}
        self.epoch_base_v = self.v.copy()

    # -- helpers -----------------------------------------------------------

    @property
    def started(self) -> int:
        """Highest timestep this core has begun computing."""
        return self.t_cur + 1 if self.computing is not None else self.t_cur

    def _consumed_frontier(self) -> int:
        """Highest timestep whose accumulator has already been read."""
        return self.computing[0] if self.computing is not None else self.t_cur

    def may_advance(self) -> bool:
        """Mode-specific admission for timestep t_cur + 1 (engine applies the
        global barrier/epoch gates for sync and speculative modes)."""
        if self.phase != PHASE_READY or self.t_cur + 1 >= self.t_max:
            return False
        if self.mode == MODE_DEPASYNC:
            return advance_condition(self.tables, self.t_cur, self.m)
        return True

    # -- packet handlers ----------------------------------------------------

    def on_dep(self, pkt: Packet) -> None:
        self.counters["scheduler_events"] += 1
        on_dep_packet(self.tables, pkt)

    def on_spike(self, pkt: Packet) -> int | None:
        """Buffer an arriving spike. In speculative mode a late spike returns
        the timestep to roll back to; otherwise returns None."""
        body = pkt.body
        tgt = self.in_syn_target[body.synapse_id]
        w = self.in_syn_weight[body.synapse_id]
        if body.anti:
            w = -w
        consuming = body.timestep + body.delay
        self.counters["synapse_acc"] += 1
        self.counters["buffer_writes"] += 1
        if self.mode == MODE_SE:
            self.rcv_log.append((consuming, tgt, w, -1))
            if consuming <= self._consumed_frontier() and consuming < self.t_max:
                return consuming
            self._vbuf_add(consuming, tgt, w)
            return None
        self.buffer.write(consuming, tgt, w)
        return None

    def _vbuf_add(self, consuming: int, tgt: int, w: int) -> None:
        row = self.vbuf.get(consuming)
        if row is None:
            row = np.zeros(max(self.n_local, 1), dtype=np.int64)
            self.vbuf[consuming] = row
        row[tgt] += w

    # -- timestep execution --------------------------------------------------

    def begin(self, cycle: int) -> tuple[int, list[Packet]]:
        """Start computing timestep t_cur + 1. Returns (cost in cycles, START
        packets to inject). The full result is computed eagerly; it becomes
        visible only at completion."""
        t = self.t_cur + 1
        if self.mode == MODE_SE:
            self.checkpoints[t] = self.v.copy()
            acc = self.vbuf.pop(t, None)
            if acc is None:
                acc = np.zeros(max(self.n_local, 1), dtype=np.int64)
        else:
            acc = self.buffer.consume()
        self.counters["buffer_reads"] += self.n_local

        ext = self.external.get(t)
        if ext is not None:
            np.add.at(acc, ext[0], ext[1])

        if self.n_local:
            v_new, fired_mask, clamps = lif_step_arrays(
                self.v, acc[: self.n_local], self.tau, self.g, self.vr, self.vth
            )
            self.counters["saturations"] += clamps
            fired = np.nonzero(fired_mask)[0].tolist()
        else:
            v_new, fired = self.v, []

        emissions = sum(
            len(self.fanout_remote[i]) + len(self.fanout_local[i]) for i in fired
        )
        cost = max(1, self.c_update * self.n_local + self.c_spike * emissions)

        self.computing = (t, cycle, v_new, fired, cost)
        self.phase = PHASE_COMPUTING

        starts: list[Packet] = []
        if self.mode == MODE_DEPASYNC:
            for _core, dst_xy, dep_id in self.start_routes:
                starts.append(Packet(
                    kind=DEP, src_core=self.cid, dst_core=_core,
                    src_xy=self.coord, dst_xy=dst_xy,
                    body=DepBody(timestep=t, flag=FLAG_START, dep_id=dep_id),
                ))
                self.counters["scheduler_events"] += 1
        return cost, starts

    def finish(self, cycle: int) -> list[Packet]:
        """Commit the pending timestep: apply states, emit spike packets and
        (dependency mode) FINISH notifications, rotate the buffer."""
        t, start_cycle, v_new, fired, cost = self.computing
        self.computing = None
        self.v = v_new

        rollback_work = self.mode == MODE_SE and t <= self.frontier
        if rollback_work:
            self.rollback_cycles += cycle - start_cycle
            self.counters["rollback_updates"] += self.n_local
        else:
            self.busy_cycles += cycle - start_cycle
        self.counters["neuron_updates"] += self.n_local

        self.raster[t] = fired
        packets: list[Packet] = []
        for i in fired:
            for tgt, w, delay in self.fanout_local[i]:
                consuming = t + delay
                self.counters["synapse_acc"] += 1
                self.counters["buffer_writes"] += 1
                if self.mode == MODE_SE:
                    self.rcv_log.append((consuming, tgt, w, t))
                    self._vbuf_add(consuming, tgt, w)
                else:
                    self.buffer.write(consuming, tgt, w)
            for dst_core, dst_xy, syn_id, delay in self.fanout_remote[i]:
                packets.append(Packet(
                    kind=SPIKE, src_core=self.cid, dst_core=dst_core,
                    src_xy=self.coord, dst_xy=dst_xy,
                    body=SpikeBody(synapse_id=syn_id, delay=delay, timestep=t),
                ))

        if self.mode == MODE_SE:
            self.sent_log[t] = list(packets)
            if t > self.frontier:
                self.frontier = t

        if self.mode == MODE_DEPASYNC:
            for _core, dst_xy, dep_id in self.finish_routes:
                packets.append(Packet(
                    kind=DEP, src_core=self.cid, dst_core=_core,
                    src_xy=self.coord, dst_xy=dst_xy,
                    body=DepBody(timestep=t, flag=FLAG_FINISH, dep_id=dep_id),
                ))
                self.counters["scheduler_events"] += 1

        if self.mode != MODE_SE:
            self.buffer.rotate()
        self.t_cur = t
        self.phase = PHASE_DONE if t + 1 >= self.t_max else PHASE_READY
        return packets

    # -- speculative rollback -------------------------------------------------

    def rollback(self, tc: int, cycle: int) -> list[Packet]:
        """Restore the checkpoint at entry of ``tc``, cancel everything sent
        for timesteps >= tc, and rebuild buffered input from the logs.
        Returns the cancellation packets to inject."""
        if tc < self.epoch_start or tc not in self.checkpoints:
            raise ProtocolFault(
                f"core {self.cid}: rollback to {tc} outside the checkpoint window"
            )
        self.rollbacks += 1
        if self.computing is not None:
            _t, start_cycle, _v, _f, _c = self.computing
            self.rollback_cycles += cycle - start_cycle
            self.computing = None
            self.gen += 1

        anti: list[Packet] = []
        for gen_t in sorted(k for k in self.sent_log if k >= tc):
            for pkt in self.sent_log.pop(gen_t):
                body = pkt.body
                anti.append(Packet(
                    kind=SPIKE, src_core=self.cid, dst_core=pkt.dst_core,
                    src_xy=self.coord, dst_xy=pkt.dst_xy,
                    body=SpikeBody(synapse_id=body.synapse_id, delay=body.delay,
                                   timestep=body.timestep, anti=True),
                ))
        for t in [t for t in self.raster if t >= tc]:
            del self.raster[t]
        for t in [t for t in self.checkpoints if t > tc]:
            del self.checkpoints[t]

        # Drop our own undone local accumulations; keep every reception.
        self.rcv_log = [e for e in self.rcv_log if e[3] < tc]

        self.v = self.checkpoints[tc].copy()
        self.vbuf = {
            c: row.copy() for c, row in self.epoch_base_vbuf.items() if c >= tc
        }
        for consuming, tgt, w, _sg in self.rcv_log:
            if consuming >= tc:
                self._vbuf_add(consuming, tgt, w)

        self.t_cur = tc - 1
        self.phase = PHASE_READY
        return anti

    def epoch_reset(self, new_start: int) -> None:
        """Seal an epoch after the periodic barrier: logs are pruned and the
        current buffered state becomes the rollback baseline."""
        self.epoch_start = new_start
        self.rcv_log = []
        self.sent_log = {}
        self.checkpoints = {new_start: self.v.copy()}
        self.epoch_base_vbuf = {c: row.copy() for c, row in self.vbuf.items()}
        self.epoch_base_v = self.v.copy()
