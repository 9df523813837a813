import pytest

from fsmesh.bench import BENCH_HEADER, bench_csv, run_bench


def test_rows_and_csv():
    rows = run_bench(sizes=(64, 128), iterations=30, depth=3)
    assert [(r.operation, r.size_bytes) for r in rows] == [
        ("keygen", 0), ("public_ratchet", 0), ("private_ratchet", 0),
        ("encrypt", 64), ("decrypt", 64), ("encrypt", 128), ("decrypt", 128)]
    assert all(r.mean_ns > 0 and r.std_ns >= 0 and r.iterations == 30 for r in rows)
    lines = bench_csv(rows).splitlines()
    assert lines[0] == ",".join(BENCH_HEADER)
    assert len(lines) == 1 + len(rows)


def test_public_ratchet_is_far_cheaper_than_private():
    rows = {r.operation: r for r in run_bench(sizes=(), iterations=30, depth=3)}
    assert rows["private_ratchet"].mean_ns > 1000 * rows["public_ratchet"].mean_ns


def test_too_few_iterations_rejected():
    with pytest.raises(ValueError):
        run_bench(iterations=10)
