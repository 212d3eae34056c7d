"""Invariant checks run by ``ctadapt check``.

Each check returns ``(ok, detail)``. ``flip_grl=True`` swaps in a gradient
reversal layer with the wrong sign, which the adversarial-gradient check
must catch.
"""
from __future__ import annotations

import contextlib
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dann import DannModel, dann_loss
from .distortion import RingParams, ring_artifact, ring_bins, ring_difference
from .phantoms import organ_dataset


def _toy(seed=0):
    rng = np.random.default_rng(seed)
    model = DannModel(9, 3, hidden=5, features=4, dropout=0.5, seed=seed)
    x = rng.random((6, 3, 3))
    d = np.array([0, 0, 0, 1, 1, 1])
    y = np.where(d == 0, rng.integers(0, 3, 6), -1)
    return model, x, y, d


def _forward(model, x, lam, domain_term=True, label_term=True, y=None, d=None):
    yl, dl = model.forward(x, training=True, rng=np.random.default_rng(5), lam=lam)
    if label_term:
        return dann_loss(yl, y, dl, d, domain_term=domain_term)
    return ad.sigmoid_bce(dl, d).sum()


def _analytic(model, loss_fn):
    model.zero_grad()
    ad.backward(loss_fn())
    return {k: np.zeros(p.shape) if p.grad is None else p.grad.copy()
            for k, p in model.params.items()}


def _numeric(model, value_fn, h=1e-5):
    out = {}
    for name, p in model.params.items():
        g = np.zeros(p.shape)
        for idx in np.ndindex(p.shape):
            old = p.data[idx]
            p.data[idx] = old + h
            up = value_fn()
            p.data[idx] = old - h
            down = value_fn()
            p.data[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def _max_rel(a, b):
    return max(float(np.max(np.abs(a[k] - b[k]) / np.maximum(np.abs(a[k]) + np.abs(b[k]), 1e-6)))
               for k in a)


def check_gradients():
    """Plain gradient (lambda = -1 makes the reversal layer an identity) vs finite differences."""
    model, x, y, d = _toy()
    an = _analytic(model, lambda: _forward(model, x, -1.0, y=y, d=d))
    fd = _numeric(model, lambda: float(_forward(model, x, -1.0, y=y, d=d).data))
    err = _max_rel(an, fd)
    return err < 1e-4, f"max relative error {err:.2e}"


def check_adversarial_gradient():
    """At lambda = 1 features get label gradient minus domain gradient."""
    model, x, y, d = _toy(1)
    an = _analytic(model, lambda: _forward(model, x, 1.0, y=y, d=d))
    label = _numeric(model, lambda: float(_forward(model, x, 1.0, False, y=y, d=d).data))
    domain = _numeric(model, lambda: float(_forward(model, x, 1.0, label_term=False, d=d).data))
    feature = ("W1", "b1", "W2", "b2")
    expected = {k: label[k] - domain[k] if k in feature else label[k] + domain[k] for k in label}
    err = _max_rel(an, expected)
    return err < 1e-4, f"max relative error {err:.2e}"


def check_masking():
    """A zero-weight instance contributes nothing to label-loss gradients."""
    model, x, y, d = _toy(2)
    masked = _analytic(model, lambda: _forward(model, x, 1.0, y=y, d=d))
    src = np.flatnonzero(d == 0)

    def dropped():
        yl, dl = model.forward(x, training=True, rng=np.random.default_rng(5), lam=1.0)

        def scatter(g):
            out = np.zeros(yl.shape)
            out[src] = g
            return (out,)

        rows = ad._node(yl.data[src], (yl,), scatter)
        return ad.softmax_cross_entropy(rows, y[src])[1] + ad.sigmoid_bce(dl, d).sum()

    ref = _analytic(model, dropped)
    err = max(float(np.max(np.abs(masked[k] - ref[k]))) for k in masked)
    return err <= 1e-12, f"max abs difference {err:.1e}"


def check_identity_distortion():
    """Identity gains leave the image bit-identical after the difference transfer."""
    images, _ = organ_dataset(2, seed=0)
    worst = 0.0
    for img in images / 255.0:
        for dx, dy in ((0, 0), (7, -3)):
            params = RingParams(np.ones(ring_bins(28, dx, dy)), dx, dy)
            diff = ring_difference(img, params)
            if diff.any() or not np.array_equal(ring_artifact(img, params), img):
                worst = max(worst, float(np.abs(diff).max()))
    return worst == 0.0, f"max |D| {worst:.1e}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "gradients": check_gradients,
    "adversarial-gradient": check_adversarial_gradient,
    "masking": check_masking,
    "identity-distortion": check_identity_distortion,
}


@contextlib.contextmanager
def flipped_reversal():
    """Temporarily replace the reversal layer with one that forgets the minus sign."""
    original = ad.gradient_reversal

    def wrong(x, lam):
        return original(x, -lam)

    ad.gradient_reversal = wrong
    try:
        yield
    finally:
        ad.gradient_reversal = original


def run_checks(flip_grl: bool = False) -> list[tuple[str, bool, str]]:
    ctx = flipped_reversal() if flip_grl else contextlib.nullcontext()
    results = []
    with ctx:
        for name, fn in CHECKS.items():
            ok, detail = fn()
            results.append((name, bool(ok), detail))
    return results
