"""Reference nonlinear functions and their Maclaurin series.

Each :class:`FunctionSpec` bundles a vectorised exact evaluator, the default
input interval used when fitting, and (when the function is analytic at 0)
a generator of Maclaurin coefficients for Taylor-matched rational fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import UnknownOperator

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FunctionSpec:
    function_id: str
    evaluator: Evaluator
    default_range: tuple[float, float]
    series: Optional[Callable[[int], list[float]]] = None

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=np.float64))

    def taylor(self, count: int) -> list[float]:
        """First ``count`` Maclaurin coefficients c_0..c_{count-1}."""
        if self.series is None:
            raise ValueError(f"{self.function_id} has no Maclaurin expansion at 0")
        return self.series(count)

    @classmethod
    def from_table(cls, xs: Sequence[float], ys: Sequence[float],
                   function_id: str = "custom-table") -> "FunctionSpec":
        """Piecewise-linear reference built from sampled (x, y) pairs."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ValueError("table needs matching 1-D x/y arrays of length >= 2")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("table x values must be strictly increasing")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("table values must be finite")
        return cls(function_id, lambda x: np.interp(x, xs, ys),
                   (float(xs[0]), float(xs[-1])))


# -- power-series helpers (truncated, float coefficients) ---------------------

def _series_div(num: Sequence[float], den: Sequence[float], count: int) -> list[float]:
    out = [0.0] * count
    for i in range(count):
        acc = num[i] if i < len(num) else 0.0
        for j in range(i):
            if i - j < len(den):
                acc -= out[j] * den[i - j]
        out[i] = acc / den[0]
    return out


def _exp_series(count):
    return [1.0 / math.factorial(i) for i in range(count)]


def _tanh_series(count):
    sinh = [0.0 if i % 2 == 0 else 1.0 / math.factorial(i) for i in range(count)]
    cosh = [1.0 / math.factorial(i) if i % 2 == 0 else 0.0 for i in range(count)]
    return _series_div(sinh, cosh, count)


def _sigmoid_series(count):
    # 1 / (1 + e^{-x})
    den = [(-1.0) ** i / math.factorial(i) for i in range(count)]
    den[0] += 1.0
    return _series_div([1.0], den, count)


def _softplus_series(count):
    sig = _sigmoid_series(max(count - 1, 1))
    return [math.log(2.0)] + [sig[i] / (i + 1) for i in range(count - 1)]


def _gelu_series(count):
    # x * Phi(x), Phi(x) = 1/2 + (1/sqrt(2 pi)) sum (-1)^n x^{2n+1} / (2^n n! (2n+1))
    phi = [0.0] * count
    phi[0] = 0.5
    k = 1.0 / math.sqrt(2.0 * math.pi)
    n = 0
    while 2 * n + 1 < count:
        phi[2 * n + 1] = k * (-1.0) ** n / (2.0 ** n * math.factorial(n) * (2 * n + 1))
        n += 1
    return [0.0] + phi[: count - 1] if count > 0 else []


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _softplus(x):
    return np.logaddexp(0.0, x)


_softplus_spec = FunctionSpec("softplus", _softplus, (-8.0, 8.0), _softplus_series)

FUNCTIONS: dict[str, FunctionSpec] = {
    "tanh": FunctionSpec("tanh", np.tanh, (-8.0, 8.0), _tanh_series),
    "sigmoid": FunctionSpec("sigmoid", expit, (-8.0, 8.0), _sigmoid_series),
    "exp": FunctionSpec("exp", np.exp, (-4.0, 4.0), _exp_series),
    "sqrt": FunctionSpec("sqrt", np.sqrt, (0.0625, 4.0)),
    "gelu": FunctionSpec("gelu", _gelu, (-6.0, 6.0), _gelu_series),
    "softplus": _softplus_spec,
    "relu-smooth": _softplus_spec,
}


def get_function(function_id: str) -> FunctionSpec:
    try:
        return FUNCTIONS[function_id]
    except KeyError:
        raise UnknownOperator(f"unsupported activation function {function_id!r}") from None
