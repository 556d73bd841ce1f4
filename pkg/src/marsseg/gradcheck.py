"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tol: float
    per_input: List[float] = field(default_factory=list)
    entries_checked: int = 0
    deterministic: bool = True


def relative_errors(
    analytic: np.ndarray, numeric: np.ndarray, floor_ratio: float = 1e-3, scale: float = 0.0
) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` is ``floor_ratio`` times the gradient scale (the largest magnitude
    in either array, or ``scale`` if larger; at least 1e-8), so entries that are
    tiny relative to the rest of the gradient are judged against the gradient's
    scale instead of against their own roundoff.
    """
    scale = max(scale, float(np.max(np.abs(numeric), initial=0.0)), float(np.max(np.abs(analytic), initial=0.0)))
    floor = max(floor_ratio * scale, 1e-8)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(
    f: Callable[..., Tensor],
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    wrt: Optional[Sequence[Tensor]] = None,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward-pass gradients of scalar ``f(x)`` with central differences.

    ``wrt`` lists the tensors to check (default ``[x]``); each must be a leaf
    with ``requires_grad`` set. ``max_entries`` caps the number of coordinates
    probed per tensor; a seeded random subset is used when the tensor is larger.
    Use float64 tensors: the default tolerance is not reachable in float32.
    """
    wrt = list(wrt) if wrt is not None else [x]
    for t in wrt:
        t.requires_grad = True
        t.zero_grad()

    loss = f(x)
    first_value = loss.item()
    loss.backward()
    analytic = [np.zeros(t.shape, dtype=np.float64) if t.grad is None else np.array(t.grad, dtype=np.float64) for t in wrt]

    with no_grad():
        repeat = f(x).item()
    deterministic = repeat == first_value
    if not deterministic:
        warnings.warn(
            "function is not deterministic; finite-difference check is unreliable",
            RuntimeWarning,
            stacklevel=2,
        )

    # tensors whose exact gradient is zero (e.g. a bias feeding a softmax) are
    # judged against the scale of the whole check, not their own roundoff
    scale = max((float(np.max(np.abs(a), initial=0.0)) for a in analytic), default=0.0)
    rng = np.random.default_rng(seed)
    per_input, checked = [], 0
    for t, a in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(indices))
        with no_grad():
            for k, idx in enumerate(indices):
                orig = flat[idx]
                flat[idx] = orig + eps
                fp = f(x).item()
                flat[idx] = orig - eps
                fm = f(x).item()
                flat[idx] = orig
                numeric[k] = (fp - fm) / (2 * eps)
        err = relative_errors(a.reshape(-1)[indices], numeric, scale=scale)
        per_input.append(float(err.max(initial=0.0)))
        checked += len(indices)

    worst = max(per_input, default=0.0)
    return GradCheckReport(
        max_rel_error=worst,
        passed=bool(worst <= tol and deterministic),
        tol=tol,
        per_input=per_input,
        entries_checked=checked,
        deterministic=deterministic,
    )
