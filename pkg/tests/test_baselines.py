import math
import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from clef.baselines import Amf, AmfConfig, AmfFm, FlowMemory, FmConfig
from clef.model import NS, ConfigError, FlowSpec

from conftest import BETA, GAMMA, compliant_stream

SPEC = FlowSpec(GAMMA, BETA)


def _flat(flow, rate, size, horizon, phase=0):
    gap = size * NS / rate
    return [(flow, size, int(phase + k * gap)) for k in range(int((horizon - phase) / gap))]


def test_amf_split():
    assert AmfConfig(40, SPEC).width == 10
    with pytest.raises(ConfigError):
        AmfConfig(42, SPEC)


def test_amf_alone_compliant():
    a = Amf(AmfConfig(40, SPEC), seed=1)
    assert not any(a.observe(f, s, t) for f, s, t in _flat(1, GAMMA, 1000, 100 * NS))


def test_amf_alone_double_rate():
    a = Amf(AmfConfig(40, SPEC), seed=1)
    for f, s, t in _flat(1, 2 * GAMMA, 1000, 100 * NS):
        if a.observe(f, s, t):
            assert abs(t / NS - BETA / GAMMA) < 0.1
            return
    pytest.fail("not detected")


@given(st.integers(0, 2**32))
def test_amf_no_fn_above_spec(seed):
    # idle link, a single flow violating its bucket is flagged at the violating packet
    rng = random.Random(seed)
    a = Amf(AmfConfig(8, SPEC), seed=seed)
    from clef.model import LeakyBucket
    ref = LeakyBucket(SPEC.gamma, SPEC.beta)
    t = 0
    for _ in range(200):
        t += rng.randrange(0, 400_000_000)
        sz = rng.randint(1, 1514)
        assert a.observe(3, sz, t) == ref.update(sz, t)


def test_amf_conservative_no_higher():
    plain = Amf(AmfConfig(8, SPEC), seed=2)
    cons = Amf(AmfConfig(8, SPEC, conservative=True), seed=2)
    rng = random.Random(0)
    t = 0
    for _ in range(5000):
        t += rng.randrange(0, 5_000_000)
        f = rng.randrange(20)
        sz = rng.randint(100, 1514)
        p, c = plain.observe(f, sz, t), cons.observe(f, sz, t)
        assert p or not c


def test_fm_first_admit():
    fm = FlowMemory(FmConfig(1, SPEC), seed=0)
    fm.observe(5, 10, 0)
    assert 5 in fm


def test_fm_eviction_probabilities():
    m = 4
    evicted = Counter()
    trials = 20_000
    for seed in range(trials):
        fm = FlowMemory(FmConfig(m, SPEC), seed=seed)
        for f in range(m):
            fm.observe(f, 1, 0)
        fm.observe(99, 1, 1)
        gone = set(range(m)) - set(fm.table)
        evicted[gone.pop() if gone else None] += 1
    p = 1 / (m + 1)
    sd = math.sqrt(trials * p * (1 - p))
    for k in list(range(m)) + [None]:
        assert abs(evicted[k] - trials * p) < 5 * sd


@given(st.integers(0, 2**32))
def test_fm_no_false_positive(seed):
    rng = random.Random(seed)
    pkts = []
    for f in range(12):
        pkts += compliant_stream(rng, SPEC, 10 * NS, flow=f)
    pkts.sort(key=lambda p: p[2])
    fm = FlowMemory(FmConfig(3, SPEC), seed=seed)
    assert not any(fm.observe(f, s, t) for f, s, t in pkts)


def test_fm_record_mode():
    fm = FlowMemory(FmConfig(2, SPEC), seed=0, record=True)
    for k in range(50):
        fm.observe(k, 10, k)
    assert fm.evictions
    assert all(start <= end for _, start, end in fm.evictions)


def test_amf_fm_gating():
    h = AmfFm.with_total(40, SPEC, seed=0)
    assert h.amf.config.m == 20 and h.fm.m == 20
    assert not h.observe(1, 100, 0)
    assert 1 not in h.fm


def test_amf_fm_detects_fast_flow():
    h = AmfFm.with_total(40, SPEC, seed=0)
    rate = 100 * GAMMA
    admitted = None
    for f, s, t in _flat(1, rate, 1514, 10 * NS):
        hit = h.observe(f, s, t)
        if admitted is None and 1 in h.fm:
            admitted = t
        if hit:
            assert t - admitted <= (BETA + 1514) / rate * NS
            assert admitted <= 2 * BETA / GAMMA * NS
            return
    pytest.fail("not detected")


def test_amf_fm_false_flag_no_detection():
    # AMF collides everybody at m=4; FM keeps compliant flows clean
    h = AmfFm(AmfConfig(4, SPEC, stages=1), FmConfig(2, SPEC), seed=0)
    pkts = []
    for f in range(8):
        pkts += _flat(f, GAMMA, 1000, 20 * NS, phase=f * 1000)
    pkts.sort(key=lambda p: p[2])
    assert not any(h.observe(f, s, t) for f, s, t in pkts)
    assert len(h.fm.table) > 0


def test_amf_fm_no_duplicate_admission():
    h = AmfFm(AmfConfig(1, SPEC, stages=1), FmConfig(4, SPEC), seed=0)
    h.observe(1, 4000, 0)
    b = list(h.fm.table[1])
    h.observe(2, 4000, 1)
    h.observe(1, 1, 2)
    assert 1 in h.fm and h.fm.table[1][0] >= b[0] - 2 * h.fm._num
