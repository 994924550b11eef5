"""Shared fixtures for the network-level tests and the acceptance suite."""
import numpy as np

from symnet.labels import ClusterConfig, LabelRecord, cluster_labels, label_distance
from symnet.network import NetConfig, NetParams, backward, forward, init, param_shapes
from symnet.synthdata import SynthSpec, gen_image, gen_rater_labels
from symnet.tensor import l2_loss

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(number, name, passed, detail):
    line = f"CRITERION {number} {'PASS' if passed else 'FAIL'}: {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def tiny_config(seed=0, streams=(1.0,), fusion="sum", dtype="float64"):
    """Two trunk layers, four channels: small enough for full finite differences."""
    return NetConfig(trunk_channels=(4, 4), trunk_strides=(4, 2), pyramid_rates=(1, 2),
                     pyramid_channels=4, pyramid_fusion=fusion, streams=streams, seed=seed,
                     dtype=dtype)


def perturbed_arrays(config, seed, bias_scale=0.1):
    """Initial weights plus random nonzero biases so no ReLU sits exactly on its kink."""
    params = init(config)
    rng = np.random.default_rng(seed)
    return [v + rng.normal(0, bias_scale, v.shape) if k.endswith("bias") else v
            for k, v in params.arrays.items()]


def net_loss_closure(config, x, target):
    """``f(*param_arrays) -> (l2 loss, grads)`` in :func:`param_shapes` order."""
    names = list(param_shapes(config))

    def f(*arrays):
        p = NetParams(config, dict(zip(names, arrays)))
        out, cache = forward(p, x, return_cache=True)
        loss, dout = l2_loss(out, target)
        g = backward(p, cache, dout)
        return loss, [g[n] for n in names]

    return f


def rater_recovery_ok(seed, jitter=1.0, n_raters=20, outlier_rate=0.0, tau=5.0, min_labelers=5):
    """Simulate raters on a synthetic image and check that clustering returns exactly
    one consensus per ground-truth symmetry, each within 1 px of it."""

    kind = "rotation" if seed % 2 else "reflection"
    _, gts = gen_image(SynthSpec(kind=kind, count=1 + seed % 3 // 2, seed=seed,
                                 image_id=f"s{seed}"))
    labels = gen_rater_labels(gts, n_raters, jitter, outlier_rate, seed=seed, size=(64, 64))
    found = cluster_labels(labels, ClusterConfig(tau, min_labelers))
    if len(found) != len(gts):
        return False
    for g in gts:
        probe = LabelRecord(g.image_id, "truth", g.kind, g.points)
        if min(label_distance(probe, LabelRecord(f.image_id, "c", f.kind, f.points))
               for f in found) > 1.0:
            return False
    return True
