"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The verdict lines are collected in VERDICTS and printed in the terminal
summary by conftest.py (and to stdout, visible with ``pytest -s``).
"""
import datetime as dt
import hashlib
import math
import random
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

import oracles
from probecount.anonymizer import (
    PepperSchedule,
    anonymize,
    anonymize_records,
    expected_collision_rate,
    generate_peppers,
    seeded_entropy,
)
from probecount.calibration import CountPair, evaluate, fit_extrapolation, fit_windowed
from probecount.config import load_scenario
from probecount.counter import FrameBatch, count_frame, count_stream, memory_footprint
from probecount.dumpstore import read_dump, rerandomize_frame, rerandomize_stream, write_dump
from probecount.pipeline import run_pipeline
from probecount.scenarios import building_count_series, daily_occupancy, opening_timestamps
from probecount.simulator import format_mac, run_scenario
from probecount.statbounds import BoundQuery, K, concentration_bound, empirical_tail, hoeffding_bound
from probecount.types import RAW_DTYPE, RECORD_DTYPE, FrameSpec, PopulationSpec, RxParams, SensorConfig

ROOT = Path(__file__).resolve().parents[1]
VERDICTS: dict[int, tuple[bool, str]] = {}
OPEN_RX = RxParams(shadowing_std=0.0, detection_floor=-math.inf)
ZERO = bytes(16)


def verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# 1 -------------------------------------------------------------------------


def test_criterion_01_unbiasedness():
    n, p, frames = 1000, 0.3, 10_000
    t0 = time.perf_counter()
    res = run_scenario(PopulationSpec(n, [(p, 1.0)]), [SensorConfig(1, rssi_lower_bound=-math.inf, rx=OPEN_RX)],
                       frames, seed=1)
    rec = np.empty(len(res.records), dtype=RECORD_DTYPE)
    rec["ts"], rec["sensor_id"], rec["rssi"] = res.records["ts"], res.records["sensor_id"], res.records["rssi"]
    rec["token"] = res.records["mac"]  # frame-unique MACs stand in for tokens
    sensors = [SensorConfig(1, rssi_lower_bound=-200.0, rx=RxParams(detection_floor=-200.0))]
    x = np.array([r.total for r in count_stream(rec, sensors, FrameSpec(), frames=res.ground_truth.frames.tolist())])
    elapsed = time.perf_counter() - t0
    mean_c = float(np.mean(x / p))
    rel = abs(mean_c - n) / n
    ok = rel < 0.01 and elapsed < 10.0 and np.array_equal(x, res.ground_truth.x)
    verdict(1, ok, f"mean C_hat={mean_c:.2f} (rel err {rel:.4%}), runtime {elapsed:.2f}s")
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_02_concentration_soundness():
    worst, cells = -math.inf, 0
    for i, p in enumerate((0.1, 0.3, 0.5, 0.7)):
        for n in (100, 1000):
            for phi in (0.05, 0.1, 0.2):
                est = empirical_tail(p, n, phi, 100_000, seed=[i, n, int(phi * 100)])
                bound = concentration_bound(BoundQuery(p, n, phi))
                worst = max(worst, est.frequency - bound - 3 * est.std_error)
                cells += 1 if est.frequency <= bound + 3 * est.std_error else 0
    ok = cells == 24
    verdict(2, ok, f"{cells}/24 cells within bound + 3 se (max excess {worst:.3g})")
    assert ok


# 3 -------------------------------------------------------------------------


def test_criterion_03_dominance():
    grid = (np.arange(1000) + 0.5) / 1000
    bad = 0
    for n, phi in ((100, 0.1), (1000, 0.1), (1000, 0.05)):
        for p in grid:
            q = BoundQuery(float(p), n, phi)
            bad += concentration_bound(q) > hoeffding_bound(q)
    q = BoundQuery(0.5, 1000, 0.1)
    gap = abs(concentration_bound(q) - hoeffding_bound(q))
    ok = bad == 0 and gap <= 1e-12
    verdict(3, ok, f"{bad} violations on 3x1000-point grid; |bound - hoeffding| at 1/2 = {gap:.1e}")
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_04_K_values_and_shape():
    exact_half = K(0.5) == 0.25
    k13 = abs(K(1 / 3) - float(oracles.K_mp(1 / 3, dps=50)))
    grid = np.linspace(0.0, 1.0, 10_001)
    k = np.array([K(p) for p in grid])
    sym = float(np.abs(k - k[::-1]).max())
    half = len(grid) // 2
    max_at_half = k.argmax() == half and k.max() <= 0.25
    mono = bool(np.all(np.diff(k[: half + 1]) > 0))
    d2 = float(np.diff(k, 2).min())
    convex = d2 >= -1e-9
    core = exact_half and k13 <= 1e-12 and sym <= 1e-12 and max_at_half and mono
    detail = (f"K(1/2)=1/4 {exact_half}, |K(1/3)-oracle|={k13:.1e}, symmetry {sym:.1e}, "
              f"max at 1/2 {max_at_half}, increasing on [0,1/2] {mono}; "
              f"convexity: min second difference {d2:.3g} vs required >= -1e-9")
    verdict(4, core and convex, detail)
    assert core
    if not convex:
        # K(0) = K(1) = 0 < K(1/2): no such function can be convex; it is concave
        assert np.all(np.diff(k, 2) <= 1e-12)
        pytest.xfail("convexity requirement unattainable: K is concave on [0, 1]")


# 5 -------------------------------------------------------------------------


def _distinct_rssi_frame(rng: random.Random, n: int):
    n_tok = max(1, n // rng.randint(1, 6))
    toks = [rng.getrandbits(64) for _ in range(n_tok)]
    used: dict[int, set] = {}
    arr = []
    for _ in range(n):
        tok = rng.choice(toks)
        taken = used.setdefault(tok, set())
        if len(taken) >= 150:
            tok = rng.getrandbits(64)
            taken = used.setdefault(tok, set())
        while True:
            rssi = rng.randint(-127, 20)
            if rssi not in taken:
                break
        taken.add(rssi)
        arr.append((rng.randint(1, 6), tok, rssi))
    return arr


def test_criterion_05_counting_oracle():
    rng = random.Random(2024)
    mismatches, total_records = 0, 0
    for i in range(200):
        n = 10_000 if i < 5 else rng.randint(0, 10_000)
        arr = _distinct_rssi_frame(rng, n)
        thresholds = {s: float(rng.randint(-110, -40)) for s in range(1, 7)}
        sensors = [SensorConfig(s, rssi_lower_bound=lb, rx=RxParams(detection_floor=-128.0))
                   for s, lb in thresholds.items()]
        got = count_frame(FrameBatch(i, arr), sensors).counts_per_sensor
        mismatches += got != oracles.brute_force_counts(arr, thresholds)
        total_records += n
    ok = mismatches == 0
    verdict(5, ok, f"{mismatches}/200 frames differ from the oracle ({total_records} records)")
    assert ok


# 6 -------------------------------------------------------------------------


def _stream_ordered_frame(n: int, seed: int):
    """Bursts in arrival order: each token is heard by 1..6 sensors back to back."""
    rng = np.random.default_rng(seed)
    hearers = rng.integers(1, 7, size=n)
    ends = np.cumsum(hearers)
    m = int(np.searchsorted(ends, n)) + 1
    tok = np.repeat(rng.integers(0, 2**63, size=m), hearers[:m])[:n]
    sid = np.concatenate([rng.permutation(6)[:h] + 1 for h in hearers[:m]])[:n]
    rssi = rng.integers(-100, -30, size=n)
    return FrameBatch(0, list(zip(sid.tolist(), tok.tolist(), rssi.tolist())))


def _best_time(batch, sensors, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        count_frame(batch, sensors)
        best = min(best, time.perf_counter() - t0)
    return best


def test_criterion_06_complexity_and_memory():
    sensors = [SensorConfig(s, rssi_lower_bound=-95.0) for s in range(1, 7)]
    sizes = (10**4, 10**5, 10**6)
    per_record = []
    for n, reps in zip(sizes, (7, 5, 3)):
        batch = _stream_ordered_frame(n, n)
        per_record.append(_best_time(batch, sensors, reps) / n)
    spread = max(per_record) / min(per_record)
    linear = spread <= 2.0

    mem_ok = True
    for n_s, n_meas, alpha in ((1, 10**6, 1.0), (6, 10**5, 0.5), (3, 12345, 0.75), (10, 777, 0.3), (0, 5, 0.9)):
        rec_mb, ht_mb = memory_footprint(n_s, n_meas, alpha)
        n = n_s * n_meas
        # exact rational closed forms, rounded once
        mem_ok &= rec_mb == float(Fraction(16 * n, 10**6))
        ht_exact = float(n * (8 / Fraction(alpha) + 16) / 10**6)
        mem_ok &= ht_mb == ht_exact if alpha in (1.0, 0.5) else math.isclose(ht_mb, ht_exact, rel_tol=1e-15)
    mem_ok &= memory_footprint(1, 10**6, 1.0) == (16.0, 24.0)
    ok = linear and mem_ok
    times = ", ".join(f"{n:.0e}: {t * 1e9:.0f} ns/rec" for n, t in zip(sizes, per_record))
    verdict(6, ok, f"{times} (spread {spread:.2f}x); memory formulas {'exact' if mem_ok else 'WRONG'}")
    assert ok


# 7 -------------------------------------------------------------------------


def test_criterion_07_anonymizer():
    mac = bytes.fromhex("001122334455")
    vector = int.from_bytes(oracles.sha256(ZERO + ZERO + mac)[:8], "big")
    vec_ok = anonymize(mac, 0, PepperSchedule(ZERO, {0: ZERO})) == vector == 0x7D68955F02FB12CD

    sched = generate_peppers(range(3), seeded_entropy(7))
    twin = PepperSchedule(sched.sensor_pepper, dict(sched.server_peppers))
    macs = np.random.default_rng(1).integers(0, 2**48, 1000, dtype=np.uint64)
    det_ok = all(anonymize(int(m), 1, sched) == anonymize(int(m), 1, twin) for m in macs)

    raw = np.zeros(10**6, dtype=RAW_DTYPE)
    raw["mac"] = np.random.default_rng(2).integers(0, 2**48, 10**6, dtype=np.uint64)
    tokens = anonymize_records(raw, generate_peppers(range(1), seeded_entropy(8)))["token"]
    top = np.bincount((tokens >> np.uint64(56)).astype(np.int64), minlength=256)
    low = np.bincount((tokens & np.uint64(0xFF)).astype(np.int64), minlength=256)
    p_top, p_low = stats.chisquare(top).pvalue, stats.chisquare(low).pvalue
    chi_ok = p_top > 0.01 and p_low > 0.01

    rate = expected_collision_rate(10**7)
    ok = vec_ok and det_ok and chi_ok and rate < 1e-9
    verdict(7, ok, f"vector {vec_ok}, determinism {det_ok}, chi-square p={p_top:.3f}/{p_low:.3f}, "
                   f"collision rate {rate:.3e}")
    assert ok


# 8 -------------------------------------------------------------------------


def test_criterion_08_dump_format(tmp_path):
    golden = ROOT / "tests" / "golden" / "sensor00003_day017994.prb"
    rec, hdr = read_dump(golden)
    out = write_dump(rec, hdr.sensor_id, hdr.day, tmp_path / golden.name)
    golden_ok = out.read_bytes() == golden.read_bytes() and hashlib.sha256(golden.read_bytes()).hexdigest() == \
        "8c7e5ec7ab0f6acbc7ea52f1532aeaf73b49137198aaea0cc59dae03eb725823"

    rng = random.Random(8)
    sensors = [SensorConfig(s, rssi_lower_bound=float(rng.randint(-100, -60)), rx=RxParams(detection_floor=-128.0))
               for s in range(1, 7)]
    changed = 0
    for i in range(100):
        n = rng.randint(0, 2000)
        toks = [rng.getrandbits(64) for _ in range(max(1, n // 3))]
        frame = np.zeros(n, dtype=RECORD_DTYPE)
        frame["sensor_id"] = [rng.randint(1, 6) for _ in range(n)]
        frame["token"] = [rng.choice(toks) for _ in range(n)]
        frame["rssi"] = [rng.randint(-110, -20) for _ in range(n)]
        before = count_frame(FrameBatch.from_array(i, frame), sensors).counts_per_sensor
        after = count_frame(FrameBatch.from_array(i, rerandomize_frame(frame, np.random.default_rng(i))),
                            sensors).counts_per_sensor
        changed += before != after

    # the same 1000 tokens in 1001 consecutive frames: 10^6 cross-frame pairs
    n_tok, n_frames = 1000, 1001
    stream = np.zeros(n_tok * n_frames, dtype=RECORD_DTYPE)
    stream["ts"] = np.repeat(np.arange(n_frames) * 60 + 30, n_tok)
    stream["sensor_id"] = 1
    stream["token"] = np.tile(np.random.default_rng(9).integers(0, 2**64, n_tok, dtype=np.uint64), n_frames)
    new = rerandomize_stream(stream, FrameSpec(60), seed=10)["token"].reshape(n_frames, n_tok)
    pairs = (n_frames - 1) * n_tok
    repeats = int(np.sum(new[1:] == new[:-1]))
    shared = sum(len(np.intersect1d(new[k], new[k + 1])) for k in range(n_frames - 1))
    ok = golden_ok and changed == 0 and repeats == 0 and shared == 0
    verdict(8, ok, f"golden byte-exact {golden_ok}, count changes {changed}/100, "
                   f"cross-frame repeats {repeats}/{pairs} (shared tokens {shared})")
    assert ok


# 9 -------------------------------------------------------------------------


MIXTURE = [(0.0, 0.15), (0.25, 0.45), (0.5, 0.4)]
P = 0.3125
START = dt.date(2019, 4, 8)


def _schedule(weeks=9, peak=300):
    ts = opening_timestamps(START, 7 * weeks)
    return ts, daily_occupancy(ts, peak)


def test_criterion_09_calibration_recovery():
    ts, occ = _schedule()
    full = []
    for seed in range(5):
        pair = building_count_series(MIXTURE, ts, occ, floors=2, covered_floors=[0, 1], seed=seed)
        full.append(fit_extrapolation(pair) * P)
    full_ok = all(abs(r - 1) <= 0.02 for r in full)

    part = building_count_series(MIXTURE, ts, occ, floors=8, covered_floors=[0, 1, 2], seed=11)
    target = (8 / 3) / P
    part_rel = fit_extrapolation(part) / target - 1
    part_ok = abs(part_rel) <= 0.03

    t0 = int(ts[0])

    def drifting(t):
        share = 0.5 - 0.03 * ((t - t0) // (7 * 86400))
        return (share, 1 - share)

    drift = building_count_series(MIXTURE, ts, occ, floors=2, covered_floors=[0], seed=12, floor_weights=drifting)
    rep = fit_windowed(drift, "week")
    win_ok = rep.average["mape"] <= rep.global_fit.mape
    ok = full_ok and part_ok and win_ok
    verdict(9, ok, f"full coverage beta*p = {', '.join(f'{r:.4f}' for r in full)}; "
                   f"3-of-8 floors rel err {part_rel:+.2%}; windowed MAPE {rep.average['mape']:.2f}% "
                   f"vs global {rep.global_fit.mape:.2f}%")
    assert ok


# 10 ------------------------------------------------------------------------


def test_criterion_10_metrics():
    m = evaluate(CountPair([0, 1], [100, 100], [90, 110]), 1.0)
    hand = m.rmse == 10.0 and m.mape == 10.0
    with pytest.warns(UserWarning):
        z = evaluate(CountPair([0, 1, 2, 3], [0, 100, 0, 100], [3, 90, 1, 110]), 1.0)
    excl = z.n_mape_excluded == 2 and z.mape == 10.0
    ok = hand and excl
    verdict(10, ok, f"RMSE={m.rmse}, MAPE={m.mape}%; zero-reference samples excluded and reported: "
                    f"{z.n_mape_excluded}")
    assert ok


# 11 ------------------------------------------------------------------------


def test_criterion_11_end_to_end(tmp_path):
    cfg = load_scenario(ROOT / "configs" / "demo.json")
    a = run_pipeline(cfg, tmp_path / "a")
    b = run_pipeline(cfg, tmp_path / "b")
    files = sorted(p.relative_to(a.out_dir) for p in a.out_dir.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b.out_dir) for p in b.out_dir.rglob("*") if p.is_file())
    identical = files == files_b and all((a.out_dir / f).read_bytes() == (b.out_dir / f).read_bytes()
                                         for f in files)

    scen = run_scenario(cfg.population, cfg.sensors, cfg.frames, cfg.mobility, cfg.seed, cfg.venue, cfg.frame_spec)
    macs = np.unique(scen.records["mac"]).tolist()
    text_forms = set()
    for m in macs:
        s = format_mac(m)
        text_forms.update({s, s.upper(), s.replace(":", "-"), f"{m:012x}", f"{m:012X}", str(m)})
    binary_forms = {m.to_bytes(6, "big") for m in macs}
    leaks = 0
    for f in files:
        data = (a.out_dir / f).read_bytes()
        forms = binary_forms if f.suffix == ".prb" else set()
        if f.suffix != ".prb":
            txt = data.decode()
            leaks += sum(1 for t in text_forms if t in txt)
        leaks += sum(1 for bform in forms if bform in data)
    ok = identical and leaks == 0 and len(macs) > 0
    verdict(11, ok, f"{len(files)} artifacts byte-identical across runs: {identical}; "
                    f"{len(macs)} raw MACs searched, {leaks} found")
    assert ok
