"""Deterministic discrete-event simulation of a mesh of fsmesh nodes.

Simulated time ``T`` runs from 0 to ``config.duration`` seconds.  The true
wall clock at ``T`` is ``config.reference_start + T``; every honest node
keeps its own drifting clock that the three-majority votes pull together.

Randomness comes from independent string-seeded streams so that, for
example, switching between mock and real crypto does not perturb traffic
or votes.  Events are ordered by ``(time, sequence)``.
"""

from __future__ import annotations

import heapq
import math
import random
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import dissemination, ratchet, timesync
from ..dissemination import MeshNode, id_list_size
from .config import SimConfig, StaticMovement, TraceMovement
from .movement import MovementModel, connectivity
from .trace import load_trace

SYNC_THRESHOLD = 0.9

# event kinds
_SAMPLE, _MOVE, _VOTE, _ATTACK, _TIME_ARRIVE, _SEND, _ANNOUNCE, _INV_ARRIVE, _PAYLOAD_ARRIVE, \
    _HEARTBEAT = range(10)

# payload state is dropped this many ratchet periods after the send
_MESSAGE_STATE_PERIODS = 10


class TransmitQueue:
    """One sender's radio: transmissions serialize in FIFO order."""

    def __init__(self, bandwidth: float):
        self.bandwidth = bandwidth
        self.busy_until = 0.0

    def transmit(self, ready: float, size: int) -> float:
        """Queue ``size`` bytes ready at ``ready``; return the instant they are received."""
        start = max(ready, self.busy_until)
        self.busy_until = start + schedule_transmission(size, self.bandwidth)
        return self.busy_until


def schedule_transmission(size: int, bandwidth: float) -> float:
    """Serialization delay in seconds for ``size`` bytes on an idle link."""
    if size <= 0:
        raise ValueError("transmission size must be positive")
    return size * 8 / bandwidth


def time_to_sync(times, shares, threshold: float = SYNC_THRESHOLD) -> Optional[float]:
    for t, share in zip(times, shares):
        if share >= threshold:
            return t
    return None


def largest_agreeing_share(clocks_ms, epsilon_ms: float) -> float:
    """Largest fraction of clocks lying within ``epsilon_ms`` of one another."""
    values = sorted(clocks_ms)
    if not values:
        return 0.0
    best, lo = 0, 0
    for hi, v in enumerate(values):
        while v - values[lo] > epsilon_ms:
            lo += 1
        best = max(best, hi - lo + 1)
    return best / len(values)


def plaintext_for(index: int, size: int) -> bytes:
    stem = b"msg %d " % index
    return (stem * (size // len(stem) + 1))[:size]


class MockCrypto:
    """Size-faithful stand-in for :class:`~fsmesh.dissemination.RatchetCrypto`.

    Ciphertexts are the real header followed by random filler of the exact
    real length; a shared oracle records who each one is for.  The held-key
    window mirrors :class:`~fsmesh.ratchet.EpochKeyring`.
    """

    _HEADER = struct.Struct(">BQB")

    def __init__(self, owner: int, oracle: dict, depth: int, rng: random.Random):
        self.owner = owner
        self.oracle = oracle
        self.depth = depth
        self.rng = rng
        self.epoch = 0
        self.previous: Optional[int] = None

    def advance_to(self, epoch: int) -> None:
        if epoch > self.epoch:
            self.previous = epoch - 1
            self.epoch = epoch

    def encrypt(self, recipient: int, epoch: int, m: bytes) -> bytes:
        n = ratchet.epoch_depth(epoch, self.depth)
        header = self._HEADER.pack(ratchet.TAG_CIPHERTEXT, epoch, n)
        size = ratchet.ciphertext_size(n, len(m))
        payload = header + self.rng.randbytes(size - len(header))
        self.oracle[payload] = (recipient, epoch, m)
        return payload

    def try_decrypt(self, payload: bytes, epochs) -> Optional[bytes]:
        record = self.oracle.get(payload)
        if record is None:  # state already collected; long past any decryptable window
            return None
        recipient, epoch, m = record
        if recipient != self.owner or epoch not in epochs:
            return None
        if epoch != self.epoch and epoch != self.previous:
            return None
        return m


@dataclass
class MessageRecord:
    sender: int
    recipient: int
    sent_at: float
    epoch: int
    plaintext: bytes
    arrived_at: Optional[float] = None
    successful: bool = False


@dataclass
class RunSummary:
    seed: int
    time_to_sync: Optional[float]
    success_ratio: float
    arrived_ratio: float
    messages: int


@dataclass
class MetricsTimeline:
    seed: int
    times: list = field(default_factory=list)
    sync_share: list = field(default_factory=list)
    agreeing_share: list = field(default_factory=list)  # within-epsilon, not written to CSV
    arrived_share: list = field(default_factory=list)
    successful_share: list = field(default_factory=list)
    summary: Optional[RunSummary] = None
    counters: dict = field(default_factory=dict)


class Simulator:
    def __init__(self, config: SimConfig, trace=None):
        self.config = config.validate()
        c = self.config
        self.period = c.ratchet_period
        self.rule = ratchet.EpochClockRule(c.epoch, 0.0, c.rollover)
        self.rngs = {name: random.Random(f"{c.seed}:{name}")
                     for name in ("clock", "roles", "phase", "vote", "attack", "traffic", "crypto")}
        self.movement = MovementModel(c, trace)
        self.n = c.users

        roles = self.rngs["roles"]
        self.attacker = [False] * self.n
        for i in roles.sample(range(self.n), c.attackers):
            self.attacker[i] = True
        self.honest = [i for i in range(self.n) if not self.attacker[i]]

        rng = self.rngs["clock"]
        self.clocks: list = [None] * self.n
        for i in self.honest:
            offset = rng.uniform(-c.clock_offset, c.clock_offset)
            drift = rng.uniform(-c.drift, c.drift)
            self.clocks[i] = timesync.ClockState((c.reference_start + offset) * 1000.0, drift, 0.0)
        self.tables = [timesync.NeighborClockTable() for _ in range(self.n)]
        self.radios = [TransmitQueue(c.bandwidth) for _ in range(self.n)]

        self.oracle: dict = {}
        self.public_keys: list = [None] * self.n
        self.nodes: list = [None] * self.n
        crypto_rng = self.rngs["crypto"]
        for i in self.honest:
            if c.crypto == "real":
                pk, sk = ratchet.fs_keygen(c.depth, rng=crypto_rng)
                crypto = dissemination.RatchetCrypto(ratchet.EpochKeyring(sk, crypto_rng), crypto_rng)
                self.public_keys[i] = pk
            else:
                crypto = MockCrypto(i, self.oracle, c.depth, crypto_rng)
                self.public_keys[i] = i
            self.nodes[i] = MeshNode(crypto, self.rule)
        self.node_epoch = [None] * self.n

        self.queue: list = []
        self._seq = 0
        self.now = 0.0
        self.messages: list[MessageRecord] = []
        self.message_of: dict = {}  # message id -> index into messages
        self.payloads: dict = {}  # message id -> bytes, while in flight anywhere
        self.holders: dict = {}  # message id -> nodes that hold or have requested it
        self.announce_pending = [False] * self.n
        self.heard = [set() for _ in range(self.n)]  # neighbours covered by the last heartbeat
        self.counters = Counter()
        self._window_sent = 0
        self._window_arrived = 0
        self._window_successful = 0
        self.timeline = MetricsTimeline(c.seed)
        self._update_topology()

    # scheduling -----------------------------------------------------------

    def _push(self, t: float, kind: int, *args) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (t, self._seq, kind, args))

    def _update_topology(self) -> None:
        positions = self.movement.positions(self.now)
        previous = getattr(self, "_positions", None)
        if previous is not None and np.array_equal(previous, positions, equal_nan=True):
            return
        self._positions = positions
        self.present = [not math.isnan(p[0]) for p in positions]
        self.neighbors = connectivity(positions, self.config.radius)
        self.relays = [None] * self.n
        for i in self.honest:
            self.relays[i] = {j for j in self.neighbors[i] if not self.attacker[j]}

    def local_seconds(self, i: int) -> float:
        return self.clocks[i].read(self.now) / 1000.0

    def _touch(self, i: int) -> float:
        """Read node ``i``'s clock and expire its cache on epoch change."""
        local = self.local_seconds(i)
        s = math.floor(local / self.period)
        if s != self.node_epoch[i]:
            self.node_epoch[i] = s
            self.nodes[i].cache.expire(s)
        return local

    # event handlers -------------------------------------------------------

    def _vote(self, i: int) -> None:
        c = self.config
        own = self.clocks[i].read(self.now)
        value = timesync.three_majority_vote(self.tables[i], own, c.epsilon_ms, self.rngs["vote"])
        self.clocks[i] = self.clocks[i].set(value, self.now)
        self._broadcast_time(i, value)
        self._push(self.now + c.sync_period, _VOTE, i)

    def _attack(self, i: int) -> None:
        c = self.config
        fake = c.reference_start + self.now + self.rngs["attack"].uniform(-c.attack_range, c.attack_range)
        self._broadcast_time(i, fake * 1000.0)
        self._push(self.now + c.sync_period, _ATTACK, i)

    def _broadcast_time(self, i: int, value_ms: float) -> None:
        if not self.neighbors[i]:
            return
        arrival = self.radios[i].transmit(self.now, timesync.TIME_BROADCAST_BYTES)
        self.counters["time_broadcasts"] += 1
        self._push(arrival, _TIME_ARRIVE, i, float(round(value_ms)), sorted(self.neighbors[i]))

    def _time_arrive(self, i: int, value_ms: float, recipients) -> None:
        now = self.now
        for j in recipients:
            clock = self.clocks[j]
            if clock is not None:
                self.tables[j].entries[i] = (value_ms, clock.read(now))

    def _send(self, i: int) -> None:
        c = self.config
        self._push(self.now + c.msg_interval, _SEND, i)
        if not self.present[i]:
            return
        traffic = self.rngs["traffic"]
        choices = [j for j in self.honest if j != i and self.present[j]]
        if not choices:
            return
        recipient = choices[traffic.randrange(len(choices))]
        local = self._touch(i)
        index = len(self.messages)
        m = plaintext_for(index, c.msg_size)
        msg = self.nodes[i].send(self.public_keys[recipient], m, local)
        mid = dissemination.message_id(msg.payload)
        epoch = ratchet.peek_epoch(msg.payload)
        self.messages.append(MessageRecord(i, recipient, self.now, epoch, m))
        self.message_of[mid] = index
        self.payloads[mid] = msg.payload
        self.holders[mid] = {i}
        if self.now >= c.stabilization:
            self._window_sent += 1
        self.counters["sent"] += 1
        self._schedule_announce(i)

    def _schedule_announce(self, i: int) -> None:
        if not self.announce_pending[i]:
            self.announce_pending[i] = True
            self._push(self.now + self.config.announce_delay, _ANNOUNCE, i)

    def _announce(self, i: int) -> None:
        self.announce_pending[i] = False
        self._touch(i)
        node = self.nodes[i]
        ids = [mid for mid in node.take_fresh().ids if mid in node.cache.payloads]
        targets = self.relays[i]
        if ids and targets:
            self._send_inventory(i, ids, set(targets))

    def _heartbeat(self, i: int) -> None:
        self._push(self.now + self.config.heartbeat, _HEARTBEAT, i)
        current = self.relays[i]
        fresh = current - self.heard[i]
        self.heard[i] = set(current)
        if not fresh:
            return
        self._touch(i)
        ids = self.nodes[i].cache.forwardable()
        if ids:
            self._send_inventory(i, ids, fresh)

    def _send_inventory(self, i: int, ids, targets) -> None:
        arrival = self.radios[i].transmit(self.now, id_list_size(len(ids)))
        self.counters["inventories"] += 1
        self._push(arrival, _INV_ARRIVE, i, ids, targets)

    def _inventory_arrive(self, i: int, ids, targets) -> None:
        in_range = targets & self.relays[i]
        if not in_range:
            return
        cache = self.nodes[i].cache.payloads
        request_delay = schedule_transmission(id_list_size(1), self.config.bandwidth)
        for mid in ids:
            if mid not in cache:
                continue
            holders = self.holders.get(mid)
            if holders is None:
                holders = self.holders[mid] = {i}
                self.payloads.setdefault(mid, cache[mid])
            missing = in_range - holders
            if not missing:
                continue
            holders |= missing
            self.counters["requests"] += len(missing)
            arrival = self.radios[i].transmit(self.now + request_delay, 1 + len(cache[mid]))
            self.counters["payload_transmissions"] += 1
            self._push(arrival, _PAYLOAD_ARRIVE, i, mid, sorted(missing))

    def _payload_arrive(self, i: int, mid: bytes, requesters) -> None:
        payload = self.payloads.get(mid)
        holders = self.holders.get(mid)
        if payload is None:
            return
        for r in requesters:
            if r not in self.relays[i]:
                if holders is not None:
                    holders.discard(r)
                continue
            local = self._touch(r)
            outcome = self.nodes[r].on_payload(payload, local, mid)
            if outcome.malformed:
                self.counters["malformed"] += 1
                continue
            if outcome.duplicate:
                self.counters["duplicates"] += 1
                continue
            self.counters["receptions"] += 1
            index = self.message_of.get(mid)
            if index is not None:
                self._account(self.messages[index], r, outcome)
            if outcome.forward:
                self._schedule_announce(r)

    def _account(self, record: MessageRecord, node: int, outcome) -> None:
        if outcome.delivered and (node != record.recipient or outcome.plaintext != record.plaintext):
            raise AssertionError("plaintext delivered to a node that was not addressed")
        if node != record.recipient or record.arrived_at is not None:
            return
        record.arrived_at = self.now
        record.successful = outcome.delivered
        if record.sent_at >= self.config.stabilization:
            self._window_arrived += 1
            self._window_successful += int(outcome.delivered)

    def _move(self) -> None:
        self._update_topology()
        self._push(self.now + self.config.mobility_step, _MOVE)

    def _sample(self) -> None:
        c = self.config
        tl = self.timeline
        live = [i for i in self.honest if self.present[i]]
        if live:
            clocks = [self.clocks[i].read(self.now) for i in live]
            subepochs = Counter(math.floor(v / 1000.0 / self.period) for v in clocks)
            sync = subepochs.most_common(1)[0][1] / len(live)
            agreeing = largest_agreeing_share(clocks, c.epsilon_ms)
        else:
            sync = agreeing = 0.0
        sent = self._window_sent
        tl.times.append(self.now)
        tl.sync_share.append(sync)
        tl.agreeing_share.append(agreeing)
        tl.arrived_share.append(self._window_arrived / sent if sent else 0.0)
        tl.successful_share.append(self._window_successful / sent if sent else 0.0)
        self._collect_garbage()
        self._push(self.now + c.sample_interval, _SAMPLE)

    def _collect_garbage(self) -> None:
        horizon = self.now - _MESSAGE_STATE_PERIODS * self.period
        stale = [mid for mid, idx in self.message_of.items() if self.messages[idx].sent_at < horizon]
        for mid in stale:
            del self.message_of[mid]
            payload = self.payloads.pop(mid, None)
            self.holders.pop(mid, None)
            if payload is not None:
                self.oracle.pop(payload, None)

    # driver ---------------------------------------------------------------

    def _seed_events(self) -> None:
        c = self.config
        phase = self.rngs["phase"]
        self._push(0.0, _SAMPLE)
        dynamic = not isinstance(c.movement, StaticMovement)
        if dynamic:
            self._push(c.mobility_step, _MOVE)
        for i in range(self.n):
            start = phase.uniform(0, c.sync_period)
            self._push(start, _ATTACK if self.attacker[i] else _VOTE, i)
        for i in self.honest:
            if c.messages:
                self._push(phase.uniform(0, c.msg_interval), _SEND, i)
            if dynamic:
                self._push(phase.uniform(0, c.heartbeat), _HEARTBEAT, i)

    def run(self) -> MetricsTimeline:
        handlers = {
            _SAMPLE: self._sample, _MOVE: self._move, _VOTE: self._vote, _ATTACK: self._attack,
            _TIME_ARRIVE: self._time_arrive, _SEND: self._send, _ANNOUNCE: self._announce,
            _INV_ARRIVE: self._inventory_arrive, _PAYLOAD_ARRIVE: self._payload_arrive,
            _HEARTBEAT: self._heartbeat,
        }
        self._seed_events()
        end = self.config.duration
        queue = self.queue
        while queue and queue[0][0] <= end:
            t, _, kind, args = heapq.heappop(queue)
            self.now = t
            handlers[kind](*args)
        self.timeline.summary = self._summarize()
        self.timeline.counters = dict(sorted(self.counters.items()))
        return self.timeline

    def _summarize(self) -> RunSummary:
        c = self.config
        last_send = c.duration - c.epoch
        window = [m for m in self.messages if c.stabilization <= m.sent_at <= last_send]
        arrived = sum(1 for m in window if m.arrived_at is not None)
        successful = sum(1 for m in window if m.successful)
        total = len(window)
        tl = self.timeline
        return RunSummary(
            seed=c.seed,
            time_to_sync=time_to_sync(tl.times, tl.sync_share),
            success_ratio=successful / total if total else 0.0,
            arrived_ratio=arrived / total if total else 0.0,
            messages=total,
        )


def run_once(config: SimConfig, trace=None) -> MetricsTimeline:
    return Simulator(config, trace).run()


def _run_seed(args) -> MetricsTimeline:
    config, trace = args
    return run_once(config, trace)


def run(config: SimConfig, jobs: int = 1) -> list[MetricsTimeline]:
    """All ``config.runs`` seeds starting at ``config.seed``, in seed order."""
    config.validate()
    trace = load_trace(config.movement.path) if isinstance(config.movement, TraceMovement) else None
    work = [(config.with_seed(config.seed + k), trace) for k in range(config.runs)]
    if jobs > 1 and len(work) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_seed, work))
    return [_run_seed(w) for w in work]


@dataclass(frozen=True)
class Band:
    mean: float
    low: float
    high: float


def aggregate(summaries: list[RunSummary]) -> dict:
    """Mean and min-max band per metric; unsynced runs are left out of the sync band."""

    def band(values):
        return Band(sum(values) / len(values), min(values), max(values)) if values else None

    synced = [s.time_to_sync for s in summaries if s.time_to_sync is not None]
    return {
        "runs": len(summaries),
        "synced_runs": len(synced),
        "time_to_sync_s": band(synced),
        "success_ratio": band([s.success_ratio for s in summaries]),
        "arrived_ratio": band([s.arrived_ratio for s in summaries]),
    }
