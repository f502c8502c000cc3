import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clef.model import NS, ConfigError, FlowSpec, seconds, th
from clef.rlfd import (CuckooTable, Rlfd, RlfdConfig, ShardedRlfd, cycle_lengths,
                       default_depth, flow_code, level_index, new_key)

from conftest import BETA, GAMMA, compliant_stream

SPEC = FlowSpec(GAMMA, BETA)


def _cfg(m=4, d=2, **kw):
    return RlfdConfig(m=m, d=d, level_ns=SPEC.level_ns, spec=SPEC, **kw)


def test_default_depth():
    assert default_depth(100, 10_000) == 3
    assert default_depth(32, 1000) == 3
    assert default_depth(128, 1) == 1


def test_preset_cycle():
    c = RlfdConfig(m=100, d=3, level_ns=seconds("0.242"), spec=SPEC)
    assert c.cycle_ns == seconds("0.726")


def test_code_deterministic():
    k = new_key(random.Random(0))
    assert flow_code(k, 42, 128, 3) == flow_code(k, 42, 128, 3)
    assert 0 <= flow_code(k, 42, 100, 3) < 100**3


def test_bit_layout():
    assert level_index(0b0110, 4, 1) == 2
    assert level_index(0b0110, 4, 2) == 1


def test_loaded_node():
    r = Rlfd(_cfg(), seed=0)
    # level 1: the root monitors every flow
    assert all(r.loaded_index(c) == level_index(c, 4, 1) for c in range(16))
    r._set_level(2, 2, 0)
    assert r.loaded_index(0b0110) == 1
    assert r.loaded_index(0b0111) is None


def test_loaded_node_mixed_radix():
    r = Rlfd(RlfdConfig(m=3, d=3, level_ns=SPEC.level_ns, spec=SPEC), seed=0)
    r._set_level(3, 2 + 1 * 3, 0)
    for c in range(27):
        want = level_index(c, 3, 3) if c % 9 == 5 else None
        assert r.loaded_index(c) == want


def _chi2(counts, n, m):
    exp = n / m
    return sum((c - exp) ** 2 / exp for c in counts)


def test_level1_uniform():
    m, n = 128, 10**6
    k = new_key(random.Random(1))
    counts = Counter(flow_code(k, f, m, 2) & (m - 1) for f in range(n))
    x = _chi2([counts[i] for i in range(m)], n, m)
    # chi-square with m-1 dof: mean 127, sd ~16
    assert abs(x - (m - 1)) < 5 * math.sqrt(2 * (m - 1))


def test_key_rotation_independent():
    m, n = 16, 50_000
    r = Rlfd(_cfg(m=m, d=2), seed=5)
    old = [r.code(f) % m for f in range(n)]
    r.advance(r.cycle_start + r.cycle_len)
    new = [r.code(f) % m for f in range(n)]
    table = Counter(zip(old, new))
    x = _chi2([table[(a, b)] for a in range(m) for b in range(m)], n, m * m)
    dof = (m - 1) ** 2
    assert abs(x - dof) < 5 * math.sqrt(2 * dof) + m


def test_tie_break_uniform():
    picks = Counter()
    for seed in range(2000):
        r = Rlfd(_cfg(), seed=seed)
        r.counters = [5, 9, 9, 1]
        picks[r._argmax()] += 1
    assert set(picks) == {1, 2}
    assert abs(picks[1] - 1000) < 5 * math.sqrt(500)


def test_advance_events():
    r = Rlfd(_cfg(m=4, d=3), seed=0)
    r.counters[3] = 10
    ev = r.advance(r.level_end)
    assert ev == [("select", 1, 3)]
    assert r.level == 2 and r.ancestor == 3
    ev = r.advance(r.cycle_start + r.cycle_len)
    assert ev[-1] == ("cycle", 0) and r.level == 1 and r.cycle_start == 3 * SPEC.level_ns


def test_unmatched_flow_no_change():
    r = Rlfd(_cfg(m=4, d=2), seed=0)
    r.advance(r.level_end)
    flow = next(f for f in range(1000) if r.loaded_index(r.code(f)) is None)
    before = (list(r.counters), list(r.table.vals))
    assert not r.observe(flow, 1000, r.level_start + 1)
    assert (list(r.counters), list(r.table.vals)) == before


def test_bottom_detection():
    r = Rlfd(_cfg(m=4, d=1), seed=0)
    assert r.th_bottom == th(SPEC, SPEC.level_ns)
    assert not r.observe(9, r.th_bottom, 0)
    assert r.observe(9, 1, 10)
    assert 9 in r.detected


def test_path_composition():
    m, d = 4, 3
    r = Rlfd(_cfg(m=m, d=d), seed=3)
    flows = range(2000)
    for k in range(d - 1):
        r.counters[1] = 1
        r.advance(r.level_end)
    want = {f for f in flows if r.code(f) % m ** (d - 1) == r.ancestor}
    got = {f for f in flows if r.loaded_index(r.code(f)) is not None}
    assert got == want and r.ancestor == 1 + 1 * m


@given(st.integers(0, 2**32))
def test_no_false_positive(seed):
    rng = random.Random(seed)
    pkts = []
    for f in range(6):
        pkts += compliant_stream(rng, SPEC, 12 * NS, flow=f)
    pkts.sort(key=lambda p: p[2])
    r = Rlfd(_cfg(m=2, d=1, jitter=0.3), seed=seed)
    assert not any(r.observe(f, sz, t) for f, sz, t in pkts)


def test_memory_independent_of_n_and_d():
    for d in (1, 2, 4):
        r = Rlfd(_cfg(m=8, d=d), seed=0)
        for f in range(5000):
            r.observe(f, 100, f)
        assert r.state_size() == {"counters": 8, "table_slots": 8}
        assert len(r.counters) == 8 and len(r.table.keys) == 8


def test_cuckoo_failure_rate():
    fails = total = 0
    rng = random.Random(0)
    for trial in range(300):
        m = 64
        tab = CuckooTable(m, 500, rng)
        pos = {}

        def positions(k):
            return pos[k]
        for key in range(m):
            pos[key] = tuple(rng.randrange(m) for _ in range(3))
            total += 1
            if tab.insert(key, pos[key], positions) is None:
                fails += 1
    assert fails / total <= 0.09


def test_cuckoo_rollback():
    rng = random.Random(0)
    tab = CuckooTable(2, 10, rng)
    pos = {0: (0, 1, 0), 1: (1, 0, 1), 2: (0, 1, 1)}
    tab.insert(0, pos[0], pos.get)
    tab.insert(1, pos[1], pos.get)
    tab.vals[:] = [5, 6]
    snapshot = (list(tab.keys), list(tab.vals))
    assert tab.insert(2, pos[2], pos.get) is None
    assert (list(tab.keys), list(tab.vals)) == snapshot


def test_short_ids_mode():
    r = Rlfd(_cfg(m=4, d=1, short_ids=True), seed=0)
    assert r.observe(1, 10_000, 0)
    assert r._table_key(1) < 1 << 48


def test_jitter_distribution():
    tc = 968_000_000
    xs = np.array([x for x, _ in zip(cycle_lengths(tc, 0.2, random.Random(1)), range(10**4))])
    assert xs.min() >= 0.8 * tc and xs.max() <= 1.2 * tc
    assert abs(xs.mean() / tc - 1) < 0.01


def test_jitter_zero_deterministic():
    gen = cycle_lengths(1000, 0, random.Random(1))
    assert [next(gen) for _ in range(5)] == [1000] * 5


def test_jitter_seed_sensitive():
    a = cycle_lengths(10**9, 0.1, random.Random(1))
    b = cycle_lengths(10**9, 0.1, random.Random(2))
    assert [next(a) for _ in range(5)] != [next(b) for _ in range(5)]


def test_last_level_absorbs_remainder():
    cfg = RlfdConfig(m=4, d=3, level_ns=1000, spec=SPEC, jitter=0.5)
    r = Rlfd(cfg, seed=2)
    for _ in range(20):
        start, length = r.cycle_start, r.cycle_len
        r.advance(r.level_end)
        r.advance(r.level_end)
        assert r.level == 3 and r.level_end == start + length
        r.advance(r.level_end)


def test_config_validation():
    with pytest.raises(ConfigError):
        RlfdConfig(m=1, d=1, level_ns=1, spec=SPEC)
    with pytest.raises(ConfigError):
        RlfdConfig(m=2, d=0, level_ns=1, spec=SPEC)
    with pytest.raises(ConfigError):
        RlfdConfig(m=256, d=9, level_ns=1, spec=SPEC)
    with pytest.raises(ConfigError):
        RlfdConfig(m=4, d=1, level_ns=1, spec=SPEC, jitter=1.0)


def _trace(seed, n=4000):
    rng = random.Random(seed)
    t = 0
    out = []
    for _ in range(n):
        t += rng.randrange(0, 2_000_000)
        out.append((rng.randrange(30), rng.randint(500, 1514), t))
    return out


def test_single_shard_identical():
    cfg = _cfg(m=4, d=2)
    a, b = Rlfd(cfg, seed=3), ShardedRlfd(cfg, 1, seed=3)
    for f, sz, t in _trace(1):
        assert a.observe(f, sz, t) == b.observe(f, sz, t)
    assert a.detected == b.detected


def test_shard_loads():
    s = ShardedRlfd(_cfg(), 4, seed=0)
    n = 10**5
    loads = Counter(s.shard_of(f) for f in range(n))
    sd = math.sqrt(n * 0.25 * 0.75)
    assert all(abs(loads[i] - n / 4) < 5 * sd for i in range(4))


def test_shard_union():
    s = ShardedRlfd(_cfg(m=2, d=1), 3, seed=0)
    got = {f for f, sz, t in _trace(2) if s.observe(f, sz, t)}
    assert got == s.detected == set().union(*(x.detected for x in s.shards))
