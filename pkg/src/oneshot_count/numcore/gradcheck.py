from __future__ import annotations

from typing import Callable, Sequence

from .tensor import Tensor, backward


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-4) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` is called with the tensor(s) in ``x`` and must return a scalar.
    Run in 64-bit; at 32-bit the central differences are noise.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
    backward(f(*xs), params=xs)
    analytic = [t.grad.copy() for t in xs]

    worst = 0.0
    for t, ga in zip(xs, analytic):
        base = t.data
        flat = base.reshape(-1)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + h
            t.data = bumped.reshape(base.shape)
            fp = float(f(*xs).data)
            bumped[i] = flat[i] - h
            t.data = bumped.reshape(base.shape)
            fm = float(f(*xs).data)
            numeric = (fp - fm) / (2.0 * h)
            a = float(ga.reshape(-1)[i])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        t.data = base
    return worst
