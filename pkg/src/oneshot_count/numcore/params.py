from __future__ import annotations

import dataclasses

import numpy as np

from .rng import Rng
from .tensor import Tensor, default_dtype


def uniform_param(rng: Rng, shape, bound: float, dtype=None) -> Tensor:
    data = rng.uniform(-bound, bound, size=tuple(shape))
    return Tensor(data, requires_grad=True, dtype=dtype or default_dtype())


def constant_param(shape, value: float, dtype=None) -> Tensor:
    return Tensor(np.full(tuple(shape), value), requires_grad=True, dtype=dtype or default_dtype())


def named_parameters(obj, prefix: str = "") -> dict[str, Tensor]:
    """Flatten nested dataclasses / lists of Tensors into ``{dotted.name: tensor}``.

    Order follows field declaration order, so names and iteration order are stable.
    """
    out: dict[str, Tensor] = {}
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            out.update(named_parameters(child, f"{prefix}.{f.name}" if prefix else f.name))
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            out.update(named_parameters(child, f"{prefix}.{i}" if prefix else str(i)))
    return out
