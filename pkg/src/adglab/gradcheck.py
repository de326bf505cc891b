"""Central finite differences and random expression graphs for checking backward."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def numerical_grad(fn, arrays: dict[str, np.ndarray], eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of scalar ``fn(arrays)`` w.r.t. every entry of every array."""
    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            up = fn(arrays)
            flat[j] = old - eps
            down = fn(arrays)
            flat[j] = old
            g.reshape(-1)[j] = (up - down) / (2 * eps)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0


UNARY = ("exp_small", "log_pos", "sigmoid", "log_sigmoid", "relu", "neg", "swish")
ROW_OPS = ("log_softmax", "softmax_pick")


def _unary(op, t):
    if op == "exp_small":
        return ad.exp(ad.mul(0.3, t))
    if op == "log_pos":
        return ad.log(ad.add(1.5, ad.sigmoid(t)))
    if op == "sigmoid":
        return ad.sigmoid(t)
    if op == "log_sigmoid":
        return ad.log_sigmoid(t)
    if op == "relu":
        return ad.relu(t)
    if op == "neg":
        return ad.neg(t)
    return ad.mul(t, ad.sigmoid(t))


def random_graph(rng: np.random.Generator, depth: int = 4):
    """A random composition of primitives; returns ``(fn, arrays)``.

    ``fn(arrays)`` builds the graph from fresh leaves and returns the scalar
    output tensor together with the leaves, so the same closure serves both
    the reverse-mode and the finite-difference evaluation.
    """
    n, d, h = int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
    arrays = {
        "x": rng.standard_normal((n, d)),
        "W": rng.standard_normal((d, h)) * 0.7,
        "b": rng.standard_normal(h) * 0.5,
        "E": rng.standard_normal((5, h)) * 0.5,
    }
    ops = [UNARY[int(i)] for i in rng.integers(0, len(UNARY), depth)]
    ids = rng.integers(0, 5, n)
    cols = rng.integers(0, h, n)
    row_op = ROW_OPS[int(rng.integers(0, len(ROW_OPS)))]
    weights = rng.standard_normal((n, 2 * h))

    def build(arr):
        leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in arr.items()}
        z = ad.add(ad.matmul(leaves["x"], leaves["W"]), leaves["b"])
        for op in ops:
            # keep relu away from its kink so differences stay smooth
            z = ad.add(_unary(op, z), 0.1 * z) if op == "relu" else _unary(op, z)
        z = ad.concat([z, ad.take(leaves["E"], ids)], axis=1)
        if row_op == "log_softmax":
            r = ad.sum_(ad.mul(weights, ad.log_softmax(z, axis=1)))
        else:
            r = ad.mean(ad.pick(ad.softmax(z, axis=1), np.concatenate([cols, cols])[:n]))
        return ad.add(r, ad.mean(ad.sub(z, ad.mean(z, axis=0, keepdims=True)))), leaves

    return build, arrays


def check_graph(build, arrays, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients."""
    out, leaves = build(arrays)
    ad.backward(out)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    numeric = numerical_grad(lambda a: float(build(a)[0].data), {k: v.copy() for k, v in arrays.items()}, eps)
    return max(relative_error(analytic[k], numeric[k]) for k in arrays)
