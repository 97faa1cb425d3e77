"""Acceptance criteria.  Each test prints one PASS/FAIL line with its numbers."""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from olc.codec import EncodeConfig, ModelSet, decode, decode_quantized, encode, encode_quantized
from olc.context import ContextModel, ModelConfig, bce_loss, bce_loss_grad, rope_rotate, train
from olc.entropy import PROB_ONE, SymbolStream, quantize_probs_batch
from olc.leaf_codec import LeafCodingPlan, predicted_bit_accuracy
from olc.metrics import bd_rate, d1_psnr
from olc.octree import build_octree
from olc.pc_io import PointCloud, compute_qs, load_ply, quantize, remaining_ratio
from olc.rate_control import (
    bpp_qs_linearity_check,
    calibrate,
    occupancy_similarity,
    qs_for_fractional_depth,
    qs_for_target,
    rc_encode,
)
from olc.synthetic import lidar_sequence, object_cloud, sparse_cloud

from conftest import FIXTURES, report

pytestmark = pytest.mark.slow


# 1 -------------------------------------------------------------------------


def test_01_lossless_roundtrip():
    rng = np.random.default_rng(2024)
    model = ContextModel(ModelConfig(d=16, layers=1, heads=2, D=2, window=256), seed=11)
    start = time.perf_counter()
    n_clouds, bad = 0, []
    for i in range(200):
        depth = int(rng.integers(2, 9))
        n = int(np.exp(rng.uniform(np.log(10), np.log(5000))))
        pc = PointCloud(rng.uniform(-50, 50, (n, 3)) * rng.uniform(0.01, 1, 3))
        want = quantize(pc, compute_qs(pc.extent, depth)).coord_set()
        for models in (ModelSet(), ModelSet.single(model)):
            bs = encode(pc, EncodeConfig(depth=depth, steps=8, models=models))
            got = decode_quantized(bs.to_bytes(), models).coord_set()
            if got != want:
                bad.append((i, models.learned))
        n_clouds += 1
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed <= 300
    report(1, ok, f"{n_clouds} clouds x (baseline, learned), mismatches={len(bad)}, {elapsed:.0f}s (limit 300s)")
    assert ok


# 2 -------------------------------------------------------------------------


def test_02_entropy_coder_fidelity():
    rng = np.random.default_rng(7)
    n = 100_000
    parts, syms, weights = [], [], []
    for K, alpha in ((2, 0.3), (8, 0.5), (255, 0.05)):
        m = n // 3 + (n - 3 * (n // 3) if K == 255 else 0)
        p = rng.dirichlet(np.full(K, alpha), size=m)
        w = quantize_probs_batch(p)
        s = np.array([rng.choice(K, p=row / row.sum()) for row in w / PROB_ONE])
        parts.append((w, s))
    enc = SymbolStream()
    for w, s in parts:
        enc.code(w, s)
    payload = enc.finish()
    dec = SymbolStream(payload.data)
    got = [dec.code(w) for w, _ in parts]
    exact = all(np.array_equal(g, s) for g, (_, s) in zip(got, parts)) and dec.dec.pos == len(payload.data)
    ce = sum(float(-np.log2(w[np.arange(len(s)), s] / PROB_ONE).sum()) for w, s in parts)
    total = sum(len(s) for _, s in parts)
    bits = 8 * len(payload.data)
    bound = ce + 0.01 * total + 64
    ok = exact and total >= n and bits <= bound
    report(2, ok, f"{total} symbols exact={exact}, payload {bits} bits <= CE {ce:.0f} + 0.01n + 64 = {bound:.0f}")
    assert ok


# 3 -------------------------------------------------------------------------


def test_03_loss_gradient():
    worst = 0.0
    for seed in range(25):
        rng = np.random.default_rng(seed)
        s = int(rng.integers(0, 8))
        b = rng.normal(scale=2.0, size=8 - s)
        y = rng.integers(0, 2, 8 - s)
        g = bce_loss_grad(b, y)
        want = (1 / (1 + np.exp(-b)) - y) / (8 - s)
        assert np.allclose(g, want, rtol=1e-12, atol=0)
        h = 1e-5
        for j in range(len(b)):
            e = np.zeros_like(b)
            e[j] = h
            fd = (bce_loss(b + e, y) - bce_loss(b - e, y)) / (2 * h)
            worst = max(worst, abs(fd - g[j]) / max(abs(g[j]), 1e-12))
    zero = max(abs(bce_loss(np.zeros(8 - s), np.random.default_rng(s).integers(0, 2, 8 - s)) - math.log(2)) for s in range(8))
    ok = worst <= 1e-5 and zero <= 1e-9
    report(3, ok, f"max relative FD error {worst:.2e} (<=1e-5) over 25 seeds, |L(0)-ln2| {zero:.1e} (<=1e-9)")
    assert ok


# 4 -------------------------------------------------------------------------


def _object_qc(rng, size):
    pc = object_cloud(rng, size)
    return quantize(pc, 1.0, pc.bbox_min)


def test_04_leaf_lossy_behaviour():
    rng = np.random.default_rng(0)
    train_set = [build_octree(_object_qc(rng, 64)) for _ in range(6)]
    test_set = [_object_qc(rng, 64) for _ in range(3)]
    model = ContextModel(ModelConfig(d=32, layers=2, heads=4, window=512), seed=0)
    train(model, train_set, "leafpredict", lr=3e-3, epochs=8, batch_size=8)
    models = ModelSet(leafpredict=model)
    s_values = [0, 2, 4, 6, 8]
    bpp, d1, acc = [], [], []
    for s in s_values:
        b, q = [], []
        for qc in test_set:
            bs = encode_quantized(qc, EncodeConfig(steps=s, models=models))
            out = decode_quantized(bs.to_bytes(), models)
            b.append(bs.bpp)
            q.append(d1_psnr(qc.coords.astype(float), out.coords.astype(float), float((1 << qc.depth) - 1)))
            if s == 4:
                truth = build_octree(qc).occupancy[-1]
                acc.append(predicted_bit_accuracy(build_octree(out).occupancy[-1], truth, LeafCodingPlan(4)))
        bpp.append(float(np.mean(b)))
        d1.append(float(np.mean(q)))
    a = all(x < y for x, y in zip(bpp, bpp[1:]))
    b_ = all(x <= y for x, y in zip(d1, d1[1:]))
    c = float(np.mean(acc)) > 0.5
    ok = a and b_ and c
    report(
        4, ok,
        f"bpp {[round(v, 3) for v in bpp]} increasing={a}; D1 {[round(v, 2) for v in d1]} non-decreasing={b_}; "
        f"accuracy(s=4) {np.mean(acc):.3f} > 0.5",
    )
    assert ok


# 5 / 10: shared LiDAR set ----------------------------------------------------


@pytest.fixture(scope="module")
def lidar():
    seq = lidar_sequence(np.random.default_rng(1), 8, beams=32, azimuth_steps=900)
    return seq[::2], seq[1::2]


def test_05_rate_control(lidar):
    calib, test = lidar
    table = calibrate(calib, depths=(10, 11), dataset_name="synthetic lidar, even frames")
    a, b = table.anchors
    endpoint = max(abs(qs_for_target(a.bpp, a, b) - a.qs), abs(qs_for_target(b.bpp, a, b) - b.qs))
    targets = np.linspace(a.bpp, b.bpp, 7)[1:-1]
    errs = [rc_encode(pc, t, table).bit_error for t in targets for pc in test]
    mean_err = float(np.mean(errs))
    lin = bpp_qs_linearity_check(calib, None, a, b, n_samples=5)
    ok = mean_err <= 0.05 and endpoint <= 1e-12 and lin <= 0.10
    report(
        5, ok,
        f"anchors L=10/11 bpp {a.bpp:.3f}/{b.bpp:.3f}; mean bit error {mean_err:.4f} (<=0.05) over "
        f"{len(targets)} targets x {len(test)} frames; endpoint error {endpoint:.1e}; linearity residual {lin:.3f} (<=0.10)",
    )
    assert ok


def test_10_occupancy_similarity(lidar):
    _, test = lidar
    info = {}
    for L in (9, 10, 11):
        sims = [occupancy_similarity(pc, qs_for_fractional_depth(L + 0.2), L + 1) for pc in test]
        info[L] = (float(np.mean([s.pooled_tv for s in sims])), float(np.mean([s.weighted_tv for s in sims])))
    pooled = info[11][0]
    ok = pooled <= 0.15
    extra = "; ".join(f"L={L}: pooled {p:.3f}, node-weighted per-level {w:.3f}" for L, (p, w) in info.items())
    report(10, ok, f"pooled TV at L=11.2 vs 12 {pooled:.3f} (<=0.15) [{extra}]")
    assert ok


# 6 -------------------------------------------------------------------------


def test_06_quantization_effect():
    dense = object_cloud(np.random.default_rng(0), 128)
    r = remaining_ratio(dense, [1.5, 2.0, 3.0])
    limits = [0.6, 0.35, 0.2]
    sparse = sparse_cloud(np.random.default_rng(1), 500, spacing=10.0)
    rs = remaining_ratio(sparse, [1.5, 2.0, 3.0])
    ok = all(v <= l for v, l in zip(r, limits)) and rs == [1.0, 1.0, 1.0]
    report(6, ok, f"dense ratios {[round(v, 3) for v in r]} <= {limits}; sparse ratios {rs}")
    assert ok


# 7 -------------------------------------------------------------------------


def test_07_bd_rate():
    q = np.linspace(30.0, 45.0, 6)
    fa = lambda x: 0.05 * x - 1.0
    fb = lambda x: 0.045 * x - 0.85 + 2e-4 * (x - 36) ** 2
    fc = lambda x: np.log10(0.8 * np.exp(x / 9.5) + 0.5)
    curve = lambda f: [(10 ** f(x), x) for x in q]

    def oracle(f1, f2):
        x = np.linspace(q[0], q[-1], 400001)
        d = f2(x) - f1(x)
        return (10 ** (np.sum((d[1:] + d[:-1]) / 2 * np.diff(x)) / (x[-1] - x[0])) - 1) * 100

    same = bd_rate(curve(fa), curve(fa))
    half = bd_rate(curve(fa), [(r / 2, p) for r, p in curve(fa)])
    dev = max(abs(bd_rate(curve(fa), curve(f)) - oracle(fa, f)) for f in (fb, fc))
    ok = abs(same) < 1e-9 and abs(half + 50.0) <= 0.01 and dev <= 0.1
    report(7, ok, f"identical {same:.2e}%, half-rate {half:.4f}%, max oracle deviation {dev:.4f} pp (<=0.1)")
    assert ok


# 8 -------------------------------------------------------------------------


def test_08_rope():
    rng = np.random.default_rng(8)
    rel, norm = 0.0, 0.0
    for _ in range(100):
        d = 2 * int(rng.integers(1, 65))
        qv, kv = rng.normal(size=d), rng.normal(size=d)
        m, n, t = (int(v) for v in rng.integers(0, 4096, 3))
        lhs = rope_rotate(qv, m) @ rope_rotate(kv, n)
        rhs = rope_rotate(qv, m + t) @ rope_rotate(kv, n + t)
        rel = max(rel, abs(lhs - rhs))
        norm = max(norm, abs(np.linalg.norm(rope_rotate(qv, m)) - np.linalg.norm(qv)))
    ok = rel <= 1e-8 and norm <= 1e-10
    report(8, ok, f"relative-position identity error {rel:.1e} (<=1e-8), norm error {norm:.1e} (<=1e-10), 100 draws")
    assert ok


# 9 -------------------------------------------------------------------------


def test_09_determinism():
    fix = Path(FIXTURES)
    pc = load_ply(fix / "object32.ply")
    runs = {encode(pc, EncodeConfig(depth=5, steps=6)).to_bytes() for _ in range(3)}
    golden_ok = []
    for s in (8, 3):
        golden = (fix / f"object32_s{s}.olc").read_bytes()
        golden_ok.append(encode(pc, EncodeConfig(depth=5, steps=s)).to_bytes() == golden)
        a, b = decode(golden), decode(golden)
        golden_ok.append(a.points.tobytes() == b.points.tobytes())
    tiny = (fix / "tiny_s8.olc").read_bytes()
    golden_ok.append(encode(load_ply(fix / "tiny.ply"), EncodeConfig(qs=1.0)).to_bytes() == tiny)
    got = {tuple(p) for p in decode(tiny).points.astype(int)}
    golden_ok.append(got == {(0, 0, 0), (3, 1, 2), (3, 3, 3)})
    ok = len(runs) == 1 and all(golden_ok)
    report(9, ok, f"repeat encodes identical={len(runs) == 1}; golden fixtures {sum(golden_ok)}/{len(golden_ok)} checks")
    assert ok
