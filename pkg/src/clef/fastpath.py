"""Compiled simulation loop for EARDet / Twin-RLFD / CLEF.

The per-packet work (blacklist filter, EARDet update, RLFD counter updates
above the bottom level, damage accounting) runs in a numba kernel.  The
kernel hands control back to Python for rare events: RLFD level boundaries,
bottom-level packets, new flows needing hash codes, and detections.  Those
events are served by the reference ``Rlfd`` objects, so every random draw
happens in the same order as in ``traffic.simulate`` and both engines give
identical reports.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .eardet import Eardet
from .hybrid import Clef, TwinRlfd
from .model import Blacklist
from .rlfd import Rlfd, flow_code
from .traffic import ATTACK_BASE, DamageReport, Scenario, _build, compute_damage, fp_damage

# kernel events
DONE, BOUNDARY, SLOW, DETECT, CODE = 0, 1, 2, 3, 4
# eardet state / params
OFF, BACKLOG, LAST, CAPREM, VREM, COUNT = range(6)
EM, BETA, RNUM, RDEN, MAXB = range(5)
# rlfd params
ON, LEVEL, D, ANC, MASK, SHIFT, LOW, DIV, POW2, RM, LEND, CYC = range(12)


@njit(cache=True)
def _evict_at(owner, val, slot, st, s):
    for j in range(owner.shape[0]):
        if owner[j] >= 0 and val[j] == s:
            slot[owner[j]] = -1
            owner[j] = -1
            st[COUNT] -= 1


@njit(cache=True)
def _min_val(owner, val):
    best = -1
    bj = -1
    for j in range(owner.shape[0]):
        if owner[j] >= 0 and (bj < 0 or val[j] < best):
            best = val[j]
            bj = j
    return bj


@njit(cache=True)
def _fill(owner, val, slot, st, par, v):
    v += st[VREM]
    m = par[EM]
    while st[COUNT] > 0:
        per = m - st[COUNT] + 1
        s = val[_min_val(owner, val)]
        need = (s - st[OFF]) * per
        if v < need:
            step = v // per
            st[OFF] += step
            v -= step * per
            break
        st[OFF] = s
        v -= need
        _evict_at(owner, val, slot, st, s)
    st[VREM] = v if st[COUNT] > 0 else 0


@njit(cache=True)
def eardet_step(owner, val, slot, st, par, f, sz, t):
    """Same update as ``Eardet.observe``; returns 1 on detection."""
    last = st[LAST]
    if t != last:
        if last >= 0:
            dt = t - last
            den = par[RDEN]
            num = par[RNUM]
            a = dt // den
            b = dt - a * den
            x = num * b + st[CAPREM]
            cap = num * a + x // den
            st[CAPREM] = x % den
            bl = st[BACKLOG]
            if cap > bl:
                st[BACKLOG] = 0
                if st[COUNT] > 0:
                    _fill(owner, val, slot, st, par, cap - bl)
            else:
                st[BACKLOG] = bl - cap
        st[LAST] = t
    b2 = st[BACKLOG] + sz
    st[BACKLOG] = b2 if b2 < par[MAXB] else par[MAXB]
    j = slot[f]
    off = st[OFF]
    if j >= 0:
        val[j] += sz
        return val[j] - off > par[BETA]
    if st[COUNT] < par[EM]:
        for j in range(owner.shape[0]):
            if owner[j] < 0:
                break
        owner[j] = f
        val[j] = off + sz
        slot[f] = j
        st[COUNT] += 1
        return sz > par[BETA]
    jm = _min_val(owner, val)
    s = val[jm]
    vmin = s - off
    if sz < vmin:
        st[OFF] = off + sz
        return False
    st[OFF] = s
    _evict_at(owner, val, slot, st, s)
    resid = sz - vmin
    if resid > 0:
        owner[jm] = f
        val[jm] = s + resid
        slot[f] = jm
        st[COUNT] += 1
        return resid > par[BETA]
    return False


@njit(cache=True)
def _match(code, p):
    if p[POW2]:
        if code & p[MASK] != p[ANC]:
            return -1
        return (code >> p[SHIFT]) & p[LOW]
    if code % p[DIV] != p[ANC]:
        return -1
    return (code // p[DIV]) % p[RM]


@njit(cache=True)
def run_kernel(i, times, sids, slot_flow, slot_size, na, blocked, sent, first, acc,
               e_on, owner, val, slot, st, par,
               codes1, cyc1, cnt1, p1, codes2, cyc2, cnt2, p2):
    n = times.shape[0]
    while i < n:
        s = sids[i]
        f = slot_flow[s]
        if f < 0:
            i += 1
            continue
        sz = slot_size[s]
        if blocked[f]:
            acc[1] += sz
            i += 1
            continue
        t = times[i]
        m1 = -1
        m2 = -1
        if p1[ON]:
            if t >= p1[LEND]:
                return i, BOUNDARY
            if cyc1[f] != p1[CYC]:
                return i, CODE
            m1 = _match(codes1[f], p1)
            if m1 >= 0 and p1[LEVEL] == p1[D]:
                return i, SLOW
        if p2[ON]:
            if t >= p2[LEND]:
                return i, BOUNDARY
            if cyc2[f] != p2[CYC]:
                return i, CODE
            m2 = _match(codes2[f], p2)
            if m2 >= 0 and p2[LEVEL] == p2[D]:
                return i, SLOW
        acc[0] += sz
        if s < na:
            sent[s] += sz
            if first[s] < 0:
                first[s] = t
        det = False
        if e_on:
            det = eardet_step(owner, val, slot, st, par, f, sz, t)
        if m1 >= 0:
            cnt1[m1] += sz
        if m2 >= 0:
            cnt2[m2] += sz
        i += 1
        if det:
            return i - 1, DETECT
    return i, DONE


class _RlfdView:
    """Kernel-side mirror (params, counters, code cache) of a reference Rlfd."""

    def __init__(self, r: Rlfd | None, cap: int):
        self.r = r
        self.p = np.zeros(12, dtype=np.int64)
        self.cnt = np.zeros(max(r.m if r else 1, 1), dtype=np.int64)
        self.codes = np.zeros(cap, dtype=np.int64)
        self.cyc = np.full(cap, -1, dtype=np.int64)
        if r is not None:
            self.sync()

    def grow(self, cap: int):
        self.codes = np.concatenate([self.codes, np.zeros(cap - len(self.codes), dtype=np.int64)])
        self.cyc = np.concatenate([self.cyc, np.full(cap - len(self.cyc), -1, dtype=np.int64)])

    def sync(self):
        r, p = self.r, self.p
        p[ON] = 1
        p[LEVEL] = r.level
        p[D] = r.d
        p[ANC] = r.ancestor
        p[POW2] = int(r._pow2)
        p[RM] = r.m
        p[LEND] = r.level_end
        p[CYC] = r.cycles_done
        if r._pow2:
            p[MASK], p[SHIFT], p[LOW] = r._mask, r._shift, r._low
        else:
            p[DIV] = r._div

    def boundary(self, t: int) -> bool:
        """Run the reference level change; True if a new cycle started."""
        r = self.r
        if r is None or t < r.level_end:
            return False
        before = r.cycles_done
        r.counters = self.cnt.tolist()
        r.advance(t)
        self.cnt[:] = 0
        self.sync()
        return r.cycles_done != before

    def code(self, dense: int, flow: int):
        r = self.r
        self.codes[dense] = flow_code(r.key, flow, r.m, r.d)
        self.cyc[dense] = r.cycles_done

    def step(self, flow: int, dense: int, size: int) -> bool:
        r = self.r
        if r is None:
            return False
        idx = r.loaded_index(int(self.codes[dense]))
        if idx is None:
            return False
        if r.level < r.d:
            self.cnt[idx] += size
            return False
        return r._bottom(flow, size)


def supports(detector) -> bool:
    if isinstance(detector, Clef):
        rs = (detector.twin.r1, detector.twin.r2)
    elif isinstance(detector, TwinRlfd):
        rs = (detector.r1, detector.r2)
    elif isinstance(detector, Rlfd):
        rs = (detector,)
    elif isinstance(detector, Eardet):
        rs = ()
    else:
        return False
    for r in rs:
        if r.m ** r.d >= 1 << 63:
            return False
    return True


def simulate_fast(detector, scn: Scenario, rng: np.random.Generator) -> DamageReport:
    """Compiled equivalent of ``traffic.simulate`` for EARDet/RLFD/CLEF."""
    if not supports(detector):
        raise TypeError(f"no compiled path for {type(detector).__name__}")
    eard = r1 = r2 = None
    if isinstance(detector, Clef):
        eard, r1, r2 = detector.eardet, detector.twin.r1, detector.twin.r2
    elif isinstance(detector, TwinRlfd):
        r1, r2 = detector.r1, detector.r2
    elif isinstance(detector, Rlfd):
        r1 = detector
    else:
        eard = detector
    times, sids, slots = _build(scn, rng)
    bl = getattr(detector, "blacklist", None)
    if bl is None:
        bl = Blacklist()
    na = slots.attack
    nslots = len(slots.flow)
    # dense flow numbering: dense index -> flow id
    flow_ids = []
    slot_flow = np.full(nslots, -1, dtype=np.int64)
    for s, f in enumerate(slots.flow):
        if f >= 0:
            slot_flow[s] = len(flow_ids)
            flow_ids.append(f)
    cap = nslots + 64
    slot_size = np.array(slots.size, dtype=np.int64)
    blocked = np.zeros(cap, dtype=np.uint8)
    sent = np.zeros(max(na, 1), dtype=np.int64)
    first = np.full(max(na, 1), -1, dtype=np.int64)
    acc = np.zeros(2, dtype=np.int64)
    m = eard.m if eard else 1
    owner = np.full(m, -1, dtype=np.int64)
    val = np.zeros(m, dtype=np.int64)
    eslot = np.full(cap, -1, dtype=np.int64)
    st = np.zeros(6, dtype=np.int64)
    st[LAST] = -1
    par = np.zeros(5, dtype=np.int64)
    if eard:
        par[:] = (eard.m, eard.beta_th, eard._rho_num, eard._rho_den, eard._max_backlog)
    v1, v2 = _RlfdView(r1, cap), _RlfdView(r2, cap)
    views = [v for v in (v1, v2) if v.r is not None]
    next_id = scn.background.n + 1
    fp = []

    def grow():
        nonlocal cap, blocked, eslot
        new = cap * 2
        blocked = np.concatenate([blocked, np.zeros(new - cap, dtype=np.uint8)])
        eslot = np.concatenate([eslot, np.full(new - cap, -1, dtype=np.int64)])
        for v in (v1, v2):
            v.grow(new)
        cap = new

    def new_flow(s):
        nonlocal next_id
        if len(flow_ids) >= cap:
            grow()
        slot_flow[s] = len(flow_ids)
        flow_ids.append(next_id)
        for v in views:
            v.code(len(flow_ids) - 1, next_id)
        next_id += 1

    def refresh_codes(v):
        for s in range(nslots):
            dn = slot_flow[s]
            if dn >= 0:
                v.code(dn, flow_ids[dn])

    def detected(i, dn):
        f = flow_ids[dn]
        t = int(times[i])
        blocked[dn] = 1
        bl.insert(f, t)
        s = int(sids[i])
        if s < na:
            if scn.background.replacement:
                new_flow(na + s)
        else:
            fp.append((f, t))
            if scn.background.replacement:
                new_flow(s)

    for v in views:
        refresh_codes(v)
    i = 0
    n = len(times)
    e_on = eard is not None
    while i < n:
        i, ev = run_kernel(i, times, sids, slot_flow, slot_size, na, blocked, sent, first, acc,
                           e_on, owner, val, eslot, st, par,
                           v1.codes, v1.cyc, v1.cnt, v1.p, v2.codes, v2.cyc, v2.cnt, v2.p)
        if ev == DONE:
            break
        t = int(times[i])
        if ev == BOUNDARY:
            for v in views:
                if v.boundary(t):
                    refresh_codes(v)
            continue
        if ev == CODE:
            dn = int(slot_flow[sids[i]])
            for v in views:
                if v.cyc[dn] != v.p[CYC]:
                    v.code(dn, flow_ids[dn])
            continue
        if ev == DETECT:
            detected(i, int(slot_flow[sids[i]]))
            i += 1
            continue
        # SLOW: one packet with a bottom-level match, processed here
        s = int(sids[i])
        dn = int(slot_flow[s])
        sz = int(slot_size[s])
        f = flow_ids[dn]
        acc[0] += sz
        if s < na:
            sent[s] += sz
            if first[s] < 0:
                first[s] = t
        e = bool(eardet_step(owner, val, eslot, st, par, dn, sz, t)) if e_on else False
        a = v1.step(f, dn, sz)
        b = v2.step(f, dn, sz)
        if e or a or b:
            detected(i, dn)
        i += 1

    horizon = scn.horizon_ns
    rep = DamageReport(packets=n, delivered_bytes=int(acc[0]), dropped_bytes=int(acc[1]),
                       attack_flows=na)
    missed = 0
    for j in range(na):
        det = bl.time_of(ATTACK_BASE + j)
        missed += det is None
        if first[j] >= 0:
            rep.d_over += compute_damage(int(sent[j]), int(first[j]), det, horizon, scn.spec, True)[0]
    rep.d_fp = sum(fp_damage(scn.background.rate, t, horizon) for _, t in fp)
    rep.fp_count = len(fp)
    rep.fn_ratio = missed / na if na else 0.0
    rep.detections = sorted(bl.entries.items(), key=lambda x: (x[1], x[0]))
    return rep
