"""Rational (Padé-form) approximants of nonlinear functions.

An approximant is ``(a_0 + a_1 x + ... + a_m x^m) / (1 + b_1 x + ... + b_n x^n)``.
Two ways of obtaining coefficients are provided:

* :func:`fit_taylor_pade` matches a given Maclaurin series through order
  ``m + n`` (exact near the origin);
* :func:`fit_least_squares` fits the linearised residual
  ``f(x) * den(x) - num(x)`` on a uniform grid, optionally refined by
  Sanathanan-Koerner reweighting, which is what the compiler uses by default
  because it holds up over wide input ranges.

Both numerator and denominator are evaluated by iterated power accumulation
(``x^i`` built by repeated multiplication, fused with the coefficient MAC) so
results are bit-reproducible by the simulator's datapath kernels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateFit, PoleInRange, TargetUnreachable
from .functions import FunctionSpec

DEFAULT_POLE_EPSILON = 1e-6

TAYLOR = "taylor"
LEAST_SQUARES = "least-squares"
METHODS = (TAYLOR, LEAST_SQUARES)


@dataclass(frozen=True)
class FitConfig:
    method: str = LEAST_SQUARES
    grid_points: int = 1024
    pole_epsilon: float = DEFAULT_POLE_EPSILON
    refine_iters: int = 5     # Sanathanan-Koerner passes after the linear solve
    eval_points: int = 4001   # grid used for MAE checks in select_order

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown fit method {self.method!r}")
        if self.grid_points < 64:
            raise ValueError("grid_points must be >= 64")
        if not self.pole_epsilon > 0:
            raise ValueError("pole_epsilon must be > 0")
        if self.refine_iters < 0 or self.eval_points < 2:
            raise ValueError("refine_iters must be >= 0 and eval_points >= 2")


@dataclass(frozen=True)
class PadeApproximant:
    m: int
    n: int
    a: tuple[float, ...]
    b: tuple[float, ...]
    range: tuple[float, float]
    function_id: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        object.__setattr__(self, "range", (float(self.range[0]), float(self.range[1])))
        if self.m < 0 or self.n < 0:
            raise ValueError("orders must be non-negative")
        if len(self.a) != self.m + 1 or len(self.b) != self.n:
            raise ValueError(f"expected {self.m + 1} numerator and {self.n} denominator "
                             f"coefficients, got {len(self.a)} and {len(self.b)}")
        if not self.range[0] < self.range[1]:
            raise ValueError("range must satisfy lo < hi")

    @property
    def k(self) -> int:
        """Balanced order; only meaningful when m == n."""
        return max(self.m, self.n)

    def __call__(self, x):
        if np.ndim(x) == 0:
            return evaluate(self, float(x))
        return evaluate_array(self, x)

    def numerator(self, x):
        return _power_accumulate(self.a, np.asarray(x, dtype=np.float64), 0.0, 1.0)

    def denominator(self, x):
        x = np.asarray(x, dtype=np.float64)
        return _power_accumulate(self.b, x, 1.0, x)

    def to_float32(self) -> "PadeApproximant":
        """Copy with coefficients rounded to single precision."""
        return PadeApproximant(self.m, self.n,
                               np.asarray(self.a, np.float32).astype(np.float64),
                               np.asarray(self.b, np.float32).astype(np.float64),
                               self.range, self.function_id)


def _power_accumulate(coeffs, x, acc0, pw0):
    acc = acc0
    pw = pw0
    for c in coeffs:
        acc = acc + c * pw
        pw = pw * x
    # broadcast so empty coefficient lists still give one value per x
    return acc + np.zeros_like(x)


def evaluate(p: PadeApproximant, x: float, pole_epsilon: float = DEFAULT_POLE_EPSILON) -> float:
    num = 0.0
    pw = 1.0
    for c in p.a:
        num = num + c * pw
        pw = pw * x
    den = 1.0
    pw = x
    for c in p.b:
        den = den + c * pw
        pw = pw * x
    if abs(den) < pole_epsilon:
        raise PoleInRange(f"denominator {den!r} at x={x!r} below {pole_epsilon}")
    return num / den


def evaluate_array(p: PadeApproximant, x, clamp: bool = False,
                   pole_epsilon: float = DEFAULT_POLE_EPSILON) -> np.ndarray:
    """Elementwise :func:`evaluate`; ``clamp`` saturates inputs to ``p.range`` first."""
    x = np.asarray(x, dtype=np.float64)
    if clamp:
        x = np.minimum(np.maximum(x, p.range[0]), p.range[1])
    num = p.numerator(x)
    den = p.denominator(x)
    bad = np.abs(den) < pole_epsilon
    if np.any(bad):
        raise PoleInRange(f"denominator below {pole_epsilon} at x={x[bad].flat[0]!r}")
    return num / den


def check_pole_free(p: PadeApproximant, pole_epsilon: float = DEFAULT_POLE_EPSILON,
                    grid_points: int = 4097) -> None:
    """Raise PoleInRange unless ``|den| >= pole_epsilon`` with no sign change on a dense grid."""
    x = np.linspace(p.range[0], p.range[1], grid_points)
    den = p.denominator(x)
    if np.min(np.abs(den)) < pole_epsilon or np.any(np.sign(den) != np.sign(den[0])):
        i = int(np.argmin(np.abs(den)))
        raise PoleInRange(f"{p.function_id} ({p.m},{p.n}) denominator reaches {den[i]:.3g} "
                          f"near x={x[i]:.6g} in [{p.range[0]}, {p.range[1]}]")


def fit_taylor_pade(taylor_coeffs: Sequence[float], m: int, n: int, *,
                    interval: tuple[float, float] = (-1.0, 1.0), function_id: str = "custom",
                    pole_epsilon: float = DEFAULT_POLE_EPSILON) -> PadeApproximant:
    """Classical order-matching Padé construction from series coefficients c_0..c_{m+n}.

    Solves ``sum_{j=0}^{n} b_j c_{k-j} = 0`` for k = m+1..m+n (with b_0 = 1),
    then forms ``a_i = sum_{j=0}^{min(i,n)} b_j c_{i-j}``.
    """
    if m < 0 or n < 0:
        raise ValueError("orders must be non-negative")
    c = [float(v) for v in taylor_coeffs]
    if len(c) < m + n + 1:
        raise ValueError(f"need {m + n + 1} series coefficients, got {len(c)}")

    def coef(i):
        return c[i] if i >= 0 else 0.0

    if n > 0:
        mat = np.array([[coef(k - j) for j in range(1, n + 1)] for k in range(m + 1, m + n + 1)])
        rhs = -np.array([c[k] for k in range(m + 1, m + n + 1)])
        if np.linalg.matrix_rank(mat) < n:
            raise DegenerateFit(f"order-matching system for ({m},{n}) is singular")
        b = np.linalg.solve(mat, rhs)
    else:
        b = np.zeros(0)
    full_b = np.concatenate([[1.0], b])
    a = [sum(full_b[j] * coef(i - j) for j in range(min(i, n) + 1)) for i in range(m + 1)]
    p = PadeApproximant(m, n, a, b, interval, function_id)
    check_pole_free(p, pole_epsilon)
    return p


def _grid(rng, points):
    return np.linspace(rng[0], rng[1], points)


def fit_least_squares(spec: FunctionSpec, m: int, n: int,
                      interval: Optional[tuple[float, float]] = None,
                      cfg: FitConfig = FitConfig()) -> PadeApproximant:
    rng = spec.default_range if interval is None else (float(interval[0]), float(interval[1]))
    if not (np.isfinite(rng[0]) and np.isfinite(rng[1]) and rng[0] < rng[1]):
        raise ValueError(f"range must be finite with lo < hi, got {rng}")
    x = _grid(rng, cfg.grid_points)
    y = spec(x)
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{spec.function_id} is not finite on {rng}")

    # work in t = x / s so the Vandermonde columns stay O(1)
    s = max(abs(rng[0]), abs(rng[1]))
    t = x / s
    van = np.vander(t, max(m, n) + 1, increasing=True)
    cols = np.hstack([van[:, : m + 1], -(y[:, None] * van[:, 1: n + 1])])
    unknowns = m + 1 + n

    weights = np.ones_like(t)
    sol = None
    for it in range(cfg.refine_iters + 1):
        w_sol, _, rank, _ = np.linalg.lstsq(cols * weights[:, None], y * weights, rcond=None)
        if rank < unknowns:
            if sol is None:
                raise DegenerateFit(f"least-squares system for ({m},{n}) has rank "
                                    f"{rank} < {unknowns}")
            break
        den = 1.0 + van[:, 1: n + 1] @ w_sol[m + 1:]
        if np.any(np.sign(den) != np.sign(den[0])) and sol is not None:
            break  # keep the last pole-free iterate
        sol = w_sol
        weights = 1.0 / np.maximum(np.abs(den), cfg.pole_epsilon)

    a = sol[: m + 1] / s ** np.arange(m + 1)
    b = sol[m + 1:] / s ** np.arange(1, n + 1)
    p = PadeApproximant(m, n, a, b, rng, spec.function_id)
    check_pole_free(p, cfg.pole_epsilon, max(4 * cfg.grid_points, 4096) + 1)
    return p


def max_abs_error(p: PadeApproximant, spec: FunctionSpec,
                  interval: Optional[tuple[float, float]] = None, grid_points: int = 4001) -> float:
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    rng = p.range if interval is None else interval
    x = _grid(rng, grid_points)
    return float(np.max(np.abs(evaluate_array(p, x) - spec(x))))


def fit(spec: FunctionSpec, k: int, interval=None, cfg: FitConfig = FitConfig()) -> PadeApproximant:
    """Balanced (k, k) fit with the configured method."""
    rng = spec.default_range if interval is None else interval
    if cfg.method == TAYLOR:
        return fit_taylor_pade(spec.taylor(2 * k + 1), k, k, interval=rng,
                               function_id=spec.function_id, pole_epsilon=cfg.pole_epsilon)
    return fit_least_squares(spec, k, k, rng, cfg)


def select_order(spec: FunctionSpec, target_mae: float, interval=None, max_k: int = 8,
                 cfg: FitConfig = FitConfig()) -> PadeApproximant:
    """Smallest balanced order k in 1..max_k whose fit meets ``target_mae``.

    Orders whose fit is degenerate or has a pole in range are skipped.
    """
    if not target_mae > 0:
        raise ValueError("target_mae must be > 0")
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    rng = spec.default_range if interval is None else interval
    best = None
    for k in range(1, max_k + 1):
        try:
            p = fit(spec, k, rng, cfg)
        except (PoleInRange, DegenerateFit):
            continue
        mae = max_abs_error(p, spec, rng, cfg.eval_points)
        if mae <= target_mae:
            return p
        best = mae if best is None else min(best, mae)
    raise TargetUnreachable(
        f"{spec.function_id}: no order k <= {max_k} reaches MAE {target_mae:g}"
        + (f" (best {best:.3g})" if best is not None else ""), best_mae=best)


def to_json(p: PadeApproximant, mae: Optional[float] = None) -> str:
    doc = {"function_id": p.function_id, "m": p.m, "n": p.n, "a": list(p.a),
           "b": list(p.b), "range": list(p.range), "mae": mae}
    return json.dumps(doc, indent=2)


def from_json(text: str) -> PadeApproximant:
    doc = json.loads(text)
    return PadeApproximant(doc["m"], doc["n"], doc["a"], doc["b"], tuple(doc["range"]),
                           doc.get("function_id", "custom"))
