"""Central finite-difference checks for every differentiable block type.

Relative error of a check is ``max|analytic - numeric| / max|numeric|`` over
all sampled entries of all checked tensors (float64, step 1e-5).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import MHCA, BidirectionalFusion, FeatureTriple, flatten_map
from .blocks import (CNNBlock, CNNToFormer, DynamicReLU, FFCBlock, FormerSubBlock, FormerToCNN,
                     FourierUnit)
from .losses import LossConfig, ce_loss, dice_loss, softmax_probs, total_loss
from .network import NetworkConfig, build
from .nn import Conv2d, Module, init_parameters
from .tensor import Tensor

BLOCK_TOL = 1e-4
NETWORK_TOL = 1e-3
STEP = 1e-5
KINK_TOL = 1e-4  # h vs h/2 disagreement that marks a nondifferentiable sample point


def numeric_grad(fn, x: Tensor, index, h=STEP) -> float:
    orig = x.data[index]
    x.data[index] = orig + h
    with T.no_grad():
        fp = fn().item()
    x.data[index] = orig - h
    with T.no_grad():
        fm = fn().item()
    x.data[index] = orig
    return (fp - fm) / (2 * h)


def check_gradients(fn, tensors, rng=None, max_entries=16, h=STEP):
    """Compare autograd against central differences; returns (rel_err, ops seen).

    ``fn`` rebuilds the scalar objective from ``tensors`` on every call. At most
    ``max_entries`` randomly chosen entries per tensor are perturbed.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    out = fn()
    ops = _graph_ops(out)
    out.backward()
    num_err = 0.0
    scale = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = np.arange(t.size)
        if t.size > max_entries:
            flat = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        for f in flat:
            idx = np.unravel_index(f, t.shape)
            n = numeric_grad(fn, t, idx, h)
            num_err = max(num_err, abs(analytic[idx] - n))
            scale = max(scale, abs(n))
    return num_err / max(scale, 1e-12), ops


def _graph_ops(out):
    ops, stack, seen = set(), [out], set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.op:
            ops.add(node.op)
        stack.extend(node._parents)
    return ops


def randomize(module: Module, rng, scale=0.5):
    """Replace every parameter by random values so no path is trivially zero."""
    for _, p in module.named_parameters():
        base = 1.0 if p.init == "ones" else 0.0
        p.data = base + scale * rng.standard_normal(p.shape)


def _projector(shape, rng):
    return Tensor(rng.standard_normal(shape))


def _module_check(module, make_inputs, call, rng, extra_params=True, max_entries=12):
    init_parameters(module, 0)
    randomize(module, rng)
    inputs = make_inputs()
    with T.no_grad():
        shape = call(*inputs).shape
    proj = _projector(shape, rng)
    tensors = list(inputs) + (module.parameters() if extra_params else [])
    return check_gradients(lambda: T.sum_(call(*inputs) * proj), tensors, rng, max_entries)


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def check_conv2d(rng):
    x, w, b = _rand(rng, 2, 3, 7, 6), _rand(rng, 4, 3, 3, 3), _rand(rng, 4)
    proj = _projector((2, 4, 4, 3), rng)
    return check_gradients(lambda: T.sum_(T.conv2d(x, w, b, stride=2, padding=1) * proj), [x, w, b], rng)


def check_cnn_block(rng):
    m = CNNBlock(4, 8)
    return _module_check(m, lambda: [_rand(rng, 1, 4, 8, 8)], m, rng)


def check_fourier_unit(rng):
    m = FourierUnit(2)
    return _module_check(m, lambda: [_rand(rng, 2, 2, 8, 4)], m, rng)


def check_ffc_block(rng):
    m = FFCBlock(4, 8, alpha=0.5)
    return _module_check(m, lambda: [_rand(rng, 1, 4, 8, 8)], m, rng)


def check_dynamic_relu(rng):
    m = DynamicReLU(4)
    return _module_check(m, lambda: [_rand(rng, 2, 4, 5, 5)], m, rng)


def check_former(rng):
    m = FormerSubBlock(8, 2)
    return _module_check(m, lambda: [_rand(rng, 2, 6, 8)], m, rng)


def check_cnn_to_former(rng):
    m = CNNToFormer(4, 2)
    return _module_check(m, lambda: [_rand(rng, 2, 4, 4, 4), _rand(rng, 2, 6, 4)], m, rng)


def check_former_to_cnn(rng):
    m = FormerToCNN(4, 2)
    return _module_check(m, lambda: [_rand(rng, 2, 6, 4), _rand(rng, 2, 4, 4, 4)], m, rng)


def check_mhca(rng):
    m = MHCA(4, 2)
    return _module_check(m, lambda: [_rand(rng, 2, 3, 4), _rand(rng, 2, 5, 4)], m, rng)


def check_fusion(rng):
    m = BidirectionalFusion(4, 2, budget=16)
    inputs = lambda: [_rand(rng, 1, 4, 8, 8) for _ in range(3)]  # noqa: E731
    return _module_check(m, inputs, lambda a, b, c: m(FeatureTriple(a, b, c)), rng)


def _loss_fixture(rng, classes=3, size=4):
    logits = _rand(rng, 2, classes, size, size)
    labels = rng.integers(0, classes, size=(2, size, size))
    return logits, labels


def check_dice(rng):
    logits, labels = _loss_fixture(rng)
    return check_gradients(lambda: dice_loss(softmax_probs(logits), labels), [logits], rng, 96)


def check_ce(rng):
    logits, labels = _loss_fixture(rng)
    return check_gradients(lambda: ce_loss(logits, labels), [logits], rng, 96)


def check_total(rng):
    logits, labels = _loss_fixture(rng)
    return check_gradients(lambda: total_loss(logits, labels, LossConfig()), [logits], rng, 96)


def micro_config(**overrides):
    base = dict(input_size=16, base_width=4, num_classes=9, heads=2, tokens=6, seed=3, dtype="float64")
    base.update(overrides)
    return NetworkConfig(**base)


def check_network(rng, n_params=20):
    """End-to-end check on one random entry of each of 20 random parameter tensors.

    At 16x16 the deepest level is 1x1, where instance norm outputs zeros, so
    every parameter feeding only that path has an identically zero gradient.
    Tensors are drawn from those whose analytic gradient is not all zero, and
    entries within a tensor from its nonzero gradient positions; sampling dead
    entries would make the check blind to backward-rule errors. Entries whose
    difference quotient changes between h and h/2 straddle a kink and are skipped.
    """
    cfg = micro_config()
    s = cfg.input_size
    model = build(cfg)
    for _, p in model.named_parameters():
        if p.init == "zeros":
            # zero-initialized projections would leave their upstream weights gradient-free
            p.data = 0.1 * rng.standard_normal(p.shape)
    images = Tensor(rng.random((1, 1, s, s)))
    proj = _projector((1, cfg.num_classes, s, s), rng)
    fn = lambda: T.sum_(model(images) * proj)  # noqa: E731
    out = fn()
    ops = _graph_ops(out)
    out.backward()
    live = [p for p in model.parameters() if np.any(p.grad)]
    err = scale = 0.0
    used = 0
    for o in rng.permutation(len(live)):
        p = live[o]
        nz = np.flatnonzero(p.grad)
        idx = np.unravel_index(nz[rng.integers(nz.size)], p.shape)
        n = numeric_grad(fn, p, idx)
        if abs(n - numeric_grad(fn, p, idx, STEP / 2)) > KINK_TOL * max(abs(n), 1e-8):
            continue  # a ReLU/max kink lies within +-h; the difference quotient is meaningless there
        err = max(err, abs(p.grad[idx] - n))
        scale = max(scale, abs(n))
        used += 1
        if used == n_params:
            break
    return err / max(scale, 1e-12), ops


SUITE = {
    "conv2d": (check_conv2d, BLOCK_TOL),
    "cnn_block": (check_cnn_block, BLOCK_TOL),
    "fourier_unit": (check_fourier_unit, BLOCK_TOL),
    "ffc_block": (check_ffc_block, BLOCK_TOL),
    "dynamic_relu": (check_dynamic_relu, BLOCK_TOL),
    "former_sub_block": (check_former, BLOCK_TOL),
    "cnn_to_former": (check_cnn_to_former, BLOCK_TOL),
    "former_to_cnn": (check_former_to_cnn, BLOCK_TOL),
    "mhca": (check_mhca, BLOCK_TOL),
    "bidirectional_fusion": (check_fusion, BLOCK_TOL),
    "dice_loss": (check_dice, BLOCK_TOL),
    "ce_loss": (check_ce, BLOCK_TOL),
    "total_loss": (check_total, BLOCK_TOL),
    "network": (check_network, NETWORK_TOL),
}


@dataclass
class GradcheckRow:
    block: str
    max_rel_err: float
    tol: float
    ops: frozenset
    seconds: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.tol)


def run_suite(seed=0, only=None) -> list:
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    rows = []
    try:
        for i, (name, (check, tol)) in enumerate(SUITE.items()):
            if only and name not in only:
                continue
            rng = np.random.default_rng([seed, i])
            start = time.perf_counter()
            err, ops = check(rng)
            rows.append(GradcheckRow(name, float(err), tol, frozenset(ops), time.perf_counter() - start))
    finally:
        T.set_default_dtype(prev)
    return rows


def format_table(rows) -> str:
    lines = ["block,max_rel_err,tol,status"]
    for r in rows:
        lines.append(f"{r.block},{r.max_rel_err:.3e},{r.tol:.0e},{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
