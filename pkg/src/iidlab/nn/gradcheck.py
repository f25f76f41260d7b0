"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _projected(fn, weights):
    def scalar(*arrays):
        out = fn(*arrays)
        data = out.data if isinstance(out, Tensor) else np.asarray(out)
        return float(np.sum(data.astype(np.float64) * weights))
    return scalar


def relative_error(analytic, numeric):
    """``max|a - n|`` normalized by the largest gradient magnitude of the group."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_grad(scalar_fn, arrays, index, step=1e-3, coords=None):
    """Central differences of ``scalar_fn`` w.r.t. ``arrays[index]`` at ``coords``."""
    arr = arrays[index]
    coords = np.ndindex(arr.shape) if coords is None else coords
    out = np.zeros(arr.shape)
    for c in coords:
        orig = arr[c]
        arr[c] = orig + step
        hi = scalar_fn(*arrays)
        arr[c] = orig - step
        lo = scalar_fn(*arrays)
        arr[c] = orig
        out[c] = (hi - lo) / (2 * step)
    return out


def check_function(fn, inputs, step=1e-3, seed=0, max_coords=None):
    """Compare gradients of ``sum(w * fn(*inputs))`` for random fixed ``w``.

    ``fn`` takes tensors and returns a tensor.  Returns one relative error per
    input, measured on at most ``max_coords`` sampled coordinates.
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(x), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    weights = rng.normal(size=out.shape) if out.ndim else np.ones(())
    (out * Tensor(weights.astype(out.dtype))).sum().backward()

    def run(*arrays):
        return fn(*[Tensor(a) for a in arrays])

    scalar = _projected(run, weights)
    arrays = [t.data.copy() for t in tensors]
    errors = []
    for i, t in enumerate(tensors):
        coords = _sample(t.shape, max_coords, rng)
        num = numeric_grad(scalar, arrays, i, step, coords)
        sel = tuple(np.array(coords).T) if coords is not None else slice(None)
        errors.append(relative_error(t.grad[sel], num[sel]))
    return errors


def _sample(shape, max_coords, rng):
    size = int(np.prod(shape))
    if max_coords is None or size <= max_coords:
        return None
    flat = rng.choice(size, max_coords, replace=False)
    return [tuple(int(v) for v in np.unravel_index(f, shape)) for f in flat]


def grad_check(net, x, tol=1e-3, step=1e-3, seed=0, max_coords=64):
    """Check every parameter group of ``net`` on input ``x``.

    Returns a report ``{"errors": {param: rel_err}, "max_error": float,
    "passed": bool, "tol": tol}``.
    """
    rng = np.random.default_rng(seed)
    params = net.parameters()
    net.zero_grad()
    x = np.asarray(x, dtype=next(iter(params.values())).dtype)
    out = net(x)
    weights = rng.normal(size=out.shape)
    (out * Tensor(weights.astype(out.dtype))).sum().backward()

    def scalar():
        return float(np.sum(net(x).data.astype(np.float64) * weights))

    errors = {}
    for name, p in params.items():
        coords = _sample(p.shape, max_coords, rng)
        coords = list(np.ndindex(p.shape)) if coords is None else coords
        analytic = np.array([p.grad[c] for c in coords], dtype=np.float64)
        numeric = np.empty(len(coords))
        for i, c in enumerate(coords):
            orig = p.data[c]
            p.data[c] = orig + step
            hi = scalar()
            p.data[c] = orig - step
            lo = scalar()
            p.data[c] = orig
            numeric[i] = (hi - lo) / (2 * step)
        errors[name] = relative_error(analytic, numeric)
    worst = max(errors.values()) if errors else 0.0
    return {"errors": errors, "max_error": worst, "passed": worst < tol, "tol": tol}


def gradcheck_suite(seed=0, tol=1e-3, step=1e-3, size=8, dtype=np.float64):
    """Check every op the networks use, both losses and a small network.

    Inputs are random ``size x size`` maps.  Runs in ``dtype`` (float64 by
    default: float32 central differences are dominated by rounding).
    Returns ``{check_name: max_relative_error}``.
    """
    from . import tensor as T
    from .layers import EncoderDecoder
    from .losses import msg_loss, mse_loss

    rng = np.random.default_rng(seed)

    def rand(*shape, low=-1.0, high=1.0):
        return rng.uniform(low, high, size=shape).astype(dtype)

    x = rand(2, 3, size, size)
    y = rand(2, 3, size, size)
    w = rand(4, 3, 3, 3) * 0.5
    b = rand(4)
    cases = {
        "add": (lambda a, c: a + c, [x, y]),
        "sub": (lambda a, c: a - c, [x, y]),
        "mul": (lambda a, c: a * c, [x, y]),
        "div": (lambda a, c: a / c, [x, rand(2, 3, size, size, low=0.5, high=2.0)]),
        "power": (lambda a: a ** 3.0, [x]),
        "relu": (T.relu, [x + np.where(np.abs(x) < 2 * step, 0.1, 0).astype(dtype)]),
        "sigmoid": (T.sigmoid, [x * 3]),
        "silu": (T.silu, [x * 3]),
        "mean": (lambda a: T.mean(a, axis=(2, 3)), [x]),
        "sum": (lambda a: T.tsum(a, axis=1), [x]),
        "reshape": (lambda a: T.reshape(a, (2, -1)) * 1.0, [x]),
        "getitem": (lambda a: T.getitem(a, (slice(None), slice(0, 2))), [x]),
        "concat": (lambda a, c: T.concat([a, c], axis=1), [x, y]),
        "conv2d": (T.conv2d, [x, w, b]),
        "avg_pool2d": (lambda a: T.avg_pool2d(a, 2), [x]),
        "upsample_bilinear": (T.upsample_bilinear, [x]),
        "forward_diff_x": (lambda a: T.forward_diff(a, -1), [x]),
        "forward_diff_y": (lambda a: T.forward_diff(a, -2), [x]),
        "mse_loss": (mse_loss, [x, y]),
        "msg_loss": (lambda a, c: msg_loss(a, c, scales=4), [x, y]),
    }
    results = {}
    for name, (fn, inputs) in cases.items():
        results[name] = max(check_function(fn, inputs, step=step, seed=seed))
    # A +-1e-3 probe through a ReLU network regularly straddles a kink, where
    # the one-sided derivative is not what central differences measure; the
    # ReLU network is therefore probed with a 1e-5 step.
    for act, act_step in (("silu", step), ("relu", min(step, 1e-5))):
        net = EncoderDecoder(3, 2, widths=(4, 6, 8), out_level=1, activation=act, seed=seed, dtype=dtype)
        report = grad_check(net, rand(1, 3, size, size, low=0.0, high=1.0), tol=tol, step=act_step,
                            seed=seed, max_coords=24)
        results[f"encoder_decoder_{act}"] = report["max_error"]
    return results
