"""End-to-end acceptance checks.  Each test reports one PASS/FAIL line through
:func:`helpers.report_criterion`; the lines are repeated in the pytest terminal
summary."""
import math
import time

import numpy as np
import pytest

from helpers import (
    net_loss_closure,
    perturbed_arrays,
    rater_recovery_ok,
    report_criterion,
    tiny_config,
)
from test_evaluate import random_instance
from test_heatmap import brute_force_heatmap, random_gts
from test_labels import oracle_dbscan, random_label_set
from test_tensor import _conv_closure, random_conv_case
from symnet.cli import main as cli_main
from symnet.dataset import Sample
from symnet.evaluate import compare_reports, evaluate_detector, f_measure, paired_t_test, pr_curve
from symnet.heatmap import synth_kind, synth_single
from symnet.labels import ConsensusSymmetry, LabelRecord, dbscan, label_distance
from symnet.baseline import detect_reflection_baseline
from symnet.network import NetConfig, predict
from symnet.synthdata import SynthSpec, gen_image
from symnet.tensor import (
    _interp_matrix,
    bilinear_resize,
    bilinear_resize_backward,
    grad_check,
    l2_loss,
    max_fuse,
    max_fuse_backward,
    relu,
    relu_backward,
)
from symnet.trainer import TrainSchedule, poly_lr, split_dataset, train


# -- 1. heatmap oracle ---------------------------------------------------------------------

def test_criterion_1_heatmap_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        gts = random_gts(10_000 + seed)
        for kind in ("reflection", "rotation"):
            diff = np.abs(synth_kind(gts, kind, 64, 64) - brute_force_heatmap(gts, kind, 64, 64))
            worst = max(worst, float(diff.max()))
    h = synth_single(ConsensusSymmetry("img", "rotation", ((30, 30),), 1), 64, 64)
    sigma_err = max(abs(h[30, 35] - math.exp(-0.5)), abs(h[33, 34] - math.exp(-0.5)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and sigma_err <= 1e-12 and elapsed < 10
    report_criterion(1, "heatmap oracle", ok,
                     f"max |diff| {worst:.2e} over 100 sets, exp(-0.5) error {sigma_err:.1e}, "
                     f"{elapsed:.1f}s")
    assert ok


# -- 2. gradients ---------------------------------------------------------------------------

def _op_reports(seed):
    rng = np.random.default_rng(seed)
    x, w, b, spec = random_conv_case(seed)
    yield "conv2d", grad_check(_conv_closure(spec), [x, w, b], n_samples=40, seed=seed)

    r = rng.standard_normal((1, 2, 4, 4))
    g = rng.standard_normal(r.shape)
    yield "relu", grad_check(lambda v: (float((relu(v) * g).sum()), [relu_backward(g, v)]),
                             [r], mask=[np.abs(r) > 1e-6])

    h, wd, oh, ow = (int(v) for v in rng.integers(1, 6, 4))
    oh, ow = oh * 3, ow * 2
    u = rng.standard_normal((1, 2, h, wd))
    gu = rng.standard_normal((1, 2, oh, ow))
    yield "bilinear", grad_check(
        lambda v: (float((bilinear_resize(v, oh, ow) * gu).sum()),
                   [bilinear_resize_backward(gu, h, wd)]), [u])

    xs = [rng.standard_normal((1, 1, 4, 4)) for _ in range(3)]
    gm = rng.standard_normal((1, 1, 4, 4))

    def fuse_f(*vs):
        out, idx = max_fuse(list(vs))
        return float((out * gm).sum()), max_fuse_backward(gm, idx, len(vs))

    yield "max_fuse", grad_check(fuse_f, xs)

    p, t = rng.standard_normal((1, 1, 3, 4)), rng.standard_normal((1, 1, 3, 4))
    yield "l2_loss", grad_check(lambda v: (l2_loss(v, t)[0], [l2_loss(v, t)[1]]), [p])

    for streams, fusion in (((1.0,), "sum"), ((0.5, 0.75, 1.0), "max")):
        cfg = tiny_config(seed, streams, fusion)
        x = rng.normal(0, 0.5, (1, 3, 32, 32))
        target = rng.random((1, 1, 32, 32))
        yield f"network{len(streams)}", grad_check(net_loss_closure(cfg, x, target),
                                                   perturbed_arrays(cfg, seed), n_samples=10,
                                                   seed=seed)


def test_criterion_2_gradients():
    start = time.perf_counter()
    worst, failures = {}, []
    for seed in range(20):
        for name, report in _op_reports(seed):
            worst[name] = max(worst.get(name, 0.0), report.max_error)
            if not report.passed:
                failures.append((name, seed, report.max_error))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report_criterion(2, "gradient checks", ok, f"20 seeds, worst rel. error: {detail}; "
                                              f"{elapsed:.0f}s")
    assert ok, failures


# -- 3. overfit -----------------------------------------------------------------------------

OVERFIT_CONFIG = NetConfig(trunk_channels=(16, 32, 64, 64, 64), pyramid_channels=32, seed=0)
OVERFIT_SCHEDULE = TrainSchedule(base_lr=0.3, total_batches=2000, batch_size=10, augment=False)


def _upsampling_floor(kind, n=10):
    """Least-squares error of the best raw output in the range of the 8x bilinear upsample
    (clamping to [0, 1] is not included, so this is a diagnostic, not a bound)."""
    u = np.kron(_interp_matrix(8, 64), _interp_matrix(8, 64))
    errs = []
    for i in range(n):
        _, gts = gen_image(SynthSpec(kind=kind, seed=i))
        t = synth_kind(gts, kind, 64, 64).ravel()
        coef, *_ = np.linalg.lstsq(u, t, rcond=None)
        errs.append(np.mean((u @ coef - t) ** 2))
    return float(np.mean(errs))


@pytest.mark.slow
def test_criterion_3_overfit():
    kind = "rotation"
    data = []
    for i in range(10):
        img, gts = gen_image(SynthSpec(kind=kind, seed=i, image_id=f"s{i}"))
        data.append(Sample(f"s{i}", img, gts))
    start = time.perf_counter()
    params, _ = train(OVERFIT_CONFIG, OVERFIT_SCHEDULE, data, kind)
    elapsed = time.perf_counter() - start
    preds = {s.image_id: predict(params, s.image) for s in data}
    mse = float(np.mean([np.mean((preds[s.image_id] - synth_kind(s.gts, kind, 64, 64)) ** 2)
                         for s in data]))
    rep = evaluate_detector(preds, {s.image_id: s.gts for s in data}, kind)
    mean_f = float(np.mean(rep.per_image_max_f))
    ok = mse < 1e-3 and mean_f > 0.9 and elapsed < 600
    floors = {k: _upsampling_floor(k) for k in ("reflection", "rotation")}
    report_criterion(3, "overfit 10 images", ok,
                     f"{kind}: clamped MSE {mse:.3e}, mean max-F {mean_f:.3f}, 2000 batches "
                     f"in {elapsed:.0f}s; raw-output upsampling floor reflection "
                     f"{floors['reflection']:.2e}, rotation {floors['rotation']:.2e}")
    assert ok


# -- 4. generalization against the baseline ----------------------------------------------------

GENERAL_CONFIG = NetConfig(trunk_channels=(32, 32, 64, 64, 64), pyramid_channels=32, seed=0)
GENERAL_SCHEDULE = TrainSchedule(base_lr=0.1, total_batches=4000, batch_size=8, seed=0)


def _reflection_set(seeds):
    out = []
    for s in seeds:
        img, gts = gen_image(SynthSpec(seed=s, image_id=f"s{s:04d}"))
        out.append(Sample(f"s{s:04d}", img, gts))
    return out


@pytest.mark.slow
def test_criterion_4_net_beats_baseline():
    train_set, test_set = _reflection_set(range(200)), _reflection_set(range(1000, 1050))
    start = time.perf_counter()
    params, log = train(GENERAL_CONFIG, GENERAL_SCHEDULE, train_set, "reflection")
    gt = {s.image_id: s.gts for s in test_set}
    net = evaluate_detector({s.image_id: predict(params, s.image) for s in test_set}, gt,
                            "reflection", detector_id="net")
    hough = evaluate_detector({s.image_id: detect_reflection_baseline(s.image) for s in test_set},
                              gt, "reflection", detector_id="hough")
    test = compare_reports(net, hough)
    elapsed = time.perf_counter() - start
    losses = np.asarray(log.losses)
    ok = (net.max_f > hough.max_f and test.mean_difference > 0 and test.p_value < 0.05
          and elapsed < 3600)
    report_criterion(4, "net beats Hough baseline", ok,
                     f"mean-curve max-F net {net.max_f:.3f} vs hough {hough.max_f:.3f}, "
                     f"paired t {test.t_statistic:.2f}, p {test.p_value:.2g}; train loss "
                     f"{losses[:500].mean():.4f} -> {losses[-500:].mean():.4f}; {elapsed:.0f}s")
    assert ok


# -- 5. clustering --------------------------------------------------------------------------

def test_criterion_5_clustering():
    exact = 0
    for seed in range(50):
        items = sorted(random_label_set(20_000 + seed), key=LabelRecord.sort_key)
        rng = np.random.default_rng(seed)
        eps, min_samples = float(rng.uniform(2, 8)), int(rng.integers(1, 8))
        exact += dbscan(items, eps, min_samples, label_distance) == \
            oracle_dbscan(items, eps, min_samples, label_distance)
    recovered = sum(rater_recovery_ok(seed) for seed in range(50))
    ok = exact == 50 and recovered >= 48
    report_criterion(5, "clustering", ok, f"DBSCAN equals oracle on {exact}/50 sets; "
                                          f"raters recovered GT on {recovered}/50 seeds")
    assert ok


# -- 6. protocol fixtures ------------------------------------------------------------------------

def test_criterion_6_protocol_fixtures():
    tr, te = split_dataset([f"id{i}" for i in range(1199)], 0.8)
    split_ok = (len(tr), len(te)) == (959, 240)
    sch = TrainSchedule(base_lr=0.01, total_batches=1000)
    lr_ok = abs(poly_lr(sch, 500) - 0.5 ** 0.9 * 0.01) < 1e-12
    f_ok = abs(float(f_measure(0.6, 0.3)) - 0.4) < 1e-12
    t = paired_t_test([1, 2, 3], [0, 0, 0])
    t_ok = abs(t.t_statistic - 3.4641) < 1e-4 and abs(t.p_value - 0.0742) < 1e-3
    monotone = sum(bool(np.all(np.diff(pr_curve(*random_instance(s)).recall) <= 0))
                   for s in range(50))
    ok = split_ok and lr_ok and f_ok and t_ok and monotone == 50
    report_criterion(6, "protocol fixtures", ok,
                     f"split {len(tr)}/{len(te)}, poly_lr(T/2) {poly_lr(sch, 500):.12f}, "
                     f"F(0.6,0.3) {float(f_measure(0.6, 0.3)):.6f}, t {t.t_statistic:.4f} "
                     f"p {t.p_value:.4f}, recall monotone on {monotone}/50")
    assert ok


# -- 7. determinism --------------------------------------------------------------------------

def _pipeline(root, tmp_path):
    def run(*argv):
        return cli_main([str(v) for v in argv])

    data = tmp_path / "data"
    if not data.exists():
        assert run("gen-synth", "--out", data, "--count", 6, "--seed", 5) == 0
    cfg = tmp_path / "train.txt"
    cfg.write_text("batch_size=2\npyramid_channels=4\ntotal_batches=5\ntrunk_channels=4,4,4,4,4\n")
    assert run("train", "--images", data / "images", "--labels", data / "consensus.jsonl",
               "--config", cfg, "--seed", 11, "--out", root / "train") == 0
    assert run("predict", "--images", data / "images", "--checkpoint",
               root / "train" / "checkpoint.symc", "--out", root / "pred", "--sidecar") == 0
    assert run("synth-gt", "--images", data / "images", "--labels", data / "consensus.jsonl",
               "--out", root / "gt") == 0
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_7_determinism(tmp_path):
    a = _pipeline(tmp_path / "a", tmp_path)
    b = _pipeline(tmp_path / "b", tmp_path)
    same = sorted(k for k in a if a[k] == b.get(k))
    ok = a.keys() == b.keys() and len(same) == len(a)
    kinds = {str(k).split("/")[0] for k in a}
    report_criterion(7, "determinism", ok,
                     f"{len(same)}/{len(a)} files byte-identical across two runs "
                     f"({', '.join(sorted(kinds))})")
    assert ok
