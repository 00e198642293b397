"""Central finite-difference gradient checks (run in 64-bit mode)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..tensor import Tensor, backward, precision


@dataclass
class GradReport:
    max_rel_error: float
    worst: str
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-4,
    max_entries: int | None = 24,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradReport:
    """Compare ``backward`` against central differences of scalar ``fn()``.

    ``fn`` must rebuild its graph from the current ``params`` data on every
    call. At most ``max_entries`` randomly chosen entries per array are probed.
    """
    with precision("f64"):
        if any(p.data.dtype != np.float64 for p in params.values()):
            raise ValueError("gradcheck needs 64-bit parameters")
        loss = fn()
        grads = backward(loss, params)
        rng = np.random.default_rng(seed)
        worst, where, n = 0.0, "", 0
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, max_entries, replace=False)
            g = grads[name].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                err = rel_error(g[i], (up - down) / (2 * h), floor)
                n += 1
                if err > worst:
                    worst, where = err, f"{name}[{i}]"
        return GradReport(worst, where, n)


def projected(out: Tensor | tuple, seed: int = 0) -> Tensor:
    """Scalar ``sum(out * R)`` with a fixed random R, so every output entry matters."""
    from ..tensor import add, mul, sum_

    outs = out if isinstance(out, tuple) else (out,)
    rng = np.random.default_rng(seed)
    total = None
    for o in outs:
        term = sum_(mul(o, rng.standard_normal(o.shape)))
        total = term if total is None else add(total, term)
    return total
