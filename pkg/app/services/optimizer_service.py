"""
Named parameter sets, the Adam update and a central finite-difference
gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.services.autodiff_service import Tape, Tensor, backward
from app.utils.errors import ShapeMismatch


class ParamSet:
    """Ordered, uniquely named parameters with per-parameter Adam state."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}
        self._steps: Dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(value, copy=True), requires_grad=True, name=name)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        self._steps[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> List[str]:
        return list(self._params)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: tuple(t.shape) for k, t in self._params.items()}

    @property
    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def step_count(self, name: str) -> int:
        return self._steps[name]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Replace parameter values in place; Adam state is reset."""
        for name, t in self._params.items():
            if name not in arrays:
                raise ShapeMismatch(f"missing parameter '{name}'")
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ShapeMismatch(f"parameter '{name}': expected {t.shape}, got {arr.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
            self._m[name] = np.zeros_like(t.data)
            self._v[name] = np.zeros_like(t.data)
            self._steps[name] = 0


def adam_step(
    params: ParamSet,
    grads: Dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or np.shape(g) != p.shape:
            raise ShapeMismatch(
                f"gradient for '{name}' has shape {None if g is None else np.shape(g)}; expected {p.shape}"
            )
        g = np.asarray(g, dtype=p.data.dtype)
        m = params._m[name] = beta1 * params._m[name] + (1.0 - beta1) * g
        v = params._v[name] = beta2 * params._v[name] + (1.0 - beta2) * g * g
        t = params._steps[name] = params._steps[name] + 1
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


@dataclass
class GradCheckReport:
    tol: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    # (parameter, flat index, analytic, numeric)
    worst: Optional[Tuple[str, int, float, float]] = None

    @property
    def max_error(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "max_error": self.max_error,
            "passed": self.passed,
            "max_rel_error": dict(self.max_rel_error),
            "worst": list(self.worst) if self.worst else None,
        }


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    den = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / den


def grad_check(
    f: Callable[[], Tensor],
    params: ParamSet,
    h: float = 1e-3,
    tol: float = 1e-4,
    max_coords: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """
    Compare backward() against (f(p+h) - f(p-h)) / 2h coordinate by coordinate.
    Runs in float64; parameters are restored to their original dtype and values.
    `max_coords` samples that many coordinates per parameter instead of all.
    """
    originals = {name: p.data for name, p in params.items()}
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    worst_err = -1.0
    try:
        for name, p in params.items():
            p.data = originals[name].astype(np.float64)

        with Tape() as tape:
            loss = f()
        analytic = backward(tape, loss, dict(params.items()))

        for name, p in params.items():
            flat = p.data.reshape(-1)
            n = flat.size
            coords = np.arange(n) if max_coords is None or max_coords >= n else rng.choice(n, max_coords, replace=False)
            ga = analytic[name].reshape(-1)
            max_err = 0.0
            for i in coords:
                old = flat[i]
                flat[i] = old + h
                fp = float(f().data)
                flat[i] = old - h
                fm = float(f().data)
                flat[i] = old
                numeric = (fp - fm) / (2.0 * h)
                err = relative_error(float(ga[i]), numeric, floor)
                if err > max_err:
                    max_err = err
                if err > worst_err:
                    worst_err = err
                    report.worst = (name, int(i), float(ga[i]), numeric)
            report.max_rel_error[name] = max_err
    finally:
        for name, p in params.items():
            p.data = originals[name]
    return report
