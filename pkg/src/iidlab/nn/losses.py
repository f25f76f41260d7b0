"""Training losses on (N, C, H, W) tensors."""

from __future__ import annotations

from . import tensor as T


def mse_loss(pred, target):
    """Mean squared error over every element."""
    diff = T.sub(pred, target)
    return T.mean(diff * diff)


def msg_loss(pred, target, scales=4):
    """Multi-scale gradient loss.

    At each scale the forward differences in x and y (zero in the last
    row/column) of prediction and target are compared in squared error and
    averaged over pixels; the per-scale values are then averaged.  Each next
    scale halves the resolution by 2x average pooling.  Scales that would go
    below 2 pixels are dropped.
    """
    if scales < 1:
        raise ValueError("scales must be >= 1")
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    terms = []
    for level in range(scales):
        if level:
            if min(pred.shape[-2:]) < 4 or pred.shape[-1] % 2 or pred.shape[-2] % 2:
                break
            pred = T.avg_pool2d(pred, 2)
            target = T.avg_pool2d(target, 2)
        diff = T.sub(pred, target)
        gx = T.forward_diff(diff, -1)
        gy = T.forward_diff(diff, -2)
        terms.append(T.mean(gx * gx) + T.mean(gy * gy))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))
