import statistics
from dataclasses import replace

import pytest

from fsmesh.sim import (
    ConvergingMovement, SimConfig, Simulator, StaticMovement, TraceMovement, aggregate, run, run_once,
)
from fsmesh.sim.engine import (
    TransmitQueue, largest_agreeing_share, schedule_transmission, time_to_sync,
)
from fsmesh.sim.trace import parse_canonical

import oracles

# small, fast scenario: synced-ish clocks, a short tree
SMALL = SimConfig(users=9, density=1.0, radius=1.0, clock_offset=0.0, drift=0.0, attack_range=0.0,
                  duration=240.0, stabilization=30.0, depth=4, runs=1, sample_interval=10.0)


def test_transmission_delay():
    assert schedule_transmission(512, 1.4e6) == pytest.approx(512 * 8 / 1.4e6)
    with pytest.raises(ValueError):
        schedule_transmission(0, 1.4e6)


def test_queue_serializes_fifo():
    q = TransmitQueue(8000.0)  # 1 ms per byte
    assert q.transmit(0.0, 10) == pytest.approx(0.010)
    assert q.transmit(0.0, 10) == pytest.approx(0.020)  # waits behind the first
    assert q.transmit(1.0, 5) == pytest.approx(1.005)  # idle again


def test_time_to_sync_helper():
    assert time_to_sync([0, 10, 20, 30], [0.1, 0.5, 0.95, 0.8]) == 20
    assert time_to_sync([0, 10], [0.1, 0.2]) is None


def test_largest_agreeing_share():
    assert largest_agreeing_share([0, 50, 100, 1000], 100) == 0.75
    assert largest_agreeing_share([], 100) == 0.0


def test_same_seed_same_timeline():
    a, b = run_once(SMALL), run_once(SMALL)
    assert a == b
    assert run_once(SMALL.with_seed(1)) != a


def test_share_invariants_and_conservation():
    sim = Simulator(SMALL)
    tl = sim.run()
    for arrived, successful in zip(tl.arrived_share, tl.successful_share):
        assert 0.0 <= successful <= arrived <= 1.0
    window = [m for m in sim.messages if m.sent_at >= SMALL.stabilization]
    assert tl.arrived_share[-1] == sum(m.arrived_at is not None for m in window) / len(window)
    assert tl.successful_share[-1] == sum(m.successful for m in window) / len(window)
    assert all(m.recipient != m.sender for m in sim.messages)
    assert all(not m.successful or m.arrived_at is not None for m in sim.messages)


@pytest.mark.parametrize("shape", ["grid3x3", "line5"])
def test_flood_completeness_in_the_simulator(shape):
    if shape == "grid3x3":
        config, trace = SMALL, None
    else:
        rows = "".join(f"{i},0,{i},0\n{i},240,{i},0\n" for i in range(5))
        trace = parse_canonical(("node_id,time_s,x_m,y_m\n" + rows).splitlines())
        config = replace(SMALL, users=5, movement=TraceMovement("in-memory"))
    sim = Simulator(config, trace)
    sim.run()
    sent = [m for m in sim.messages if m.sent_at <= config.duration - 10]
    assert sent
    assert all(m.arrived_at is not None and m.successful for m in sent)
    # everyone saw every recent message (older ids have legitimately expired from the caches)
    recent = [mid for mid, idx in sim.message_of.items()
              if config.duration - 60 <= sim.messages[idx].sent_at <= config.duration - 10]
    assert recent
    for i in sim.honest:
        assert all(mid in sim.nodes[i].cache for mid in recent)


def test_real_and_mock_crypto_agree():
    config = replace(SMALL, users=6, duration=240.0, depth=3, clock_offset=10.0)
    mock = run_once(config)
    real = run_once(replace(config, crypto="real"))
    assert real == mock
    assert real.summary.messages > 0


def test_attackers_never_vote_or_send():
    sim = Simulator(replace(SMALL, attackers=2))
    sim.run()
    bad = {i for i in range(sim.n) if sim.attacker[i]}
    assert len(bad) == 2
    assert all(m.sender not in bad and m.recipient not in bad for m in sim.messages)
    assert all(sim.clocks[i] is None for i in bad)


def test_clique_agrees_within_epsilon_in_20_minutes():
    config = SimConfig(users=50, radius=1000.0, duration=1200.0, messages=False, runs=16)
    hits = 0
    for tl in run(config):
        hits += any(share >= 0.9 for share in tl.agreeing_share)
    assert hits >= 14


def _mean_tts(config, seeds=8):
    """Mean time to sync; a run that never syncs counts as the whole duration."""
    runs = run(replace(config, runs=seeds))
    return statistics.mean(config.duration if tl.summary.time_to_sync is None else tl.summary.time_to_sync
                           for tl in runs)


def test_denser_networks_sync_no_slower():
    base = SimConfig(users=100, duration=1800.0, messages=False)
    dense = _mean_tts(replace(base, density=1.0))
    sparse = _mean_tts(replace(base, density=0.25))  # 2 m spacing
    assert dense <= sparse


def test_converging_syncs_slower_than_static():
    base = SimConfig(users=50, duration=3600.0, messages=False)
    static = _mean_tts(base)
    converging = _mean_tts(replace(base, movement=ConvergingMovement(groups=2)))
    assert converging > static


def test_attackers_lower_success():
    base = SimConfig(users=49, duration=900.0, stabilization=120.0, runs=8)
    clean = aggregate([tl.summary for tl in run(base)])["success_ratio"].mean
    attacked = aggregate([tl.summary for tl in run(replace(base, attackers=5))])["success_ratio"].mean
    assert attacked < clean


def test_aggregate_bands():
    summaries = [tl.summary for tl in run(replace(SMALL, runs=3))]
    agg = aggregate(summaries)
    assert agg["runs"] == 3
    band = agg["success_ratio"]
    assert band.low <= band.mean <= band.high


def test_static_topology_is_computed_once():
    sim = Simulator(SMALL)
    assert sim.neighbors == oracles.brute_neighbors([(i % 3, i // 3) for i in range(9)], 1.0)
    assert isinstance(sim.config.movement, StaticMovement)
