"""Datapath kernels of the simulator: window filtering, wrapped convolution and
rational evaluation.

Each kernel has a loop implementation compiled with numba and a vectorised
numpy implementation. ``OVERMIND_KERNELS=numpy`` (or numba being absent)
selects numpy; the default is numba. Both produce identical results except
for floating-point summation order in :func:`circ_conv_rows`.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
except ImportError:  # numba is an optional extra
    njit = None

FIELDS = 7  # batch_start, row_lo, row_hi, col_lo, col_hi, circ_offset, modulus


def decomposition_order(shape, strides) -> np.ndarray:
    """Dims from outermost to innermost in storage order."""
    dims = sorted(range(len(shape)), key=lambda d: (-strides[d], -shape[d], d))
    return np.asarray(dims, dtype=np.int64)


# -- numpy implementations ----------------------------------------------------------

def storage_coords(shape, strides, offsets) -> np.ndarray:
    """Logical coordinates ``[n, ndim]`` of storage offsets (negative = outside)."""
    offsets = np.asarray(offsets, dtype=np.int64)
    out = np.zeros((offsets.size, len(shape)), dtype=np.int64)
    rem = offsets.copy()
    for d in decomposition_order(shape, strides):
        out[:, d] = rem // strides[d]
        rem = rem - out[:, d] * strides[d]
    return out


def accept_matrix_numpy(addrs, windows, shape, strides) -> np.ndarray:
    addrs = np.asarray(addrs, dtype=np.int64)
    windows = np.asarray(windows, dtype=np.int64).reshape(-1, FIELDS)
    shape = np.asarray(shape, dtype=np.int64)
    strides = np.asarray(strides, dtype=np.int64)
    numel = int(np.prod(shape))
    nd = shape.size
    out = np.zeros((windows.shape[0], addrs.size), dtype=np.bool_)
    for r, (bs, rlo, rhi, clo, chi, _off, mod) in enumerate(windows):
        if mod > 0:
            out[r] = ((addrs - bs) % mod) < (chi - clo + 1)
            continue
        off = addrs - bs
        inside = (off >= 0) & (off < numel)
        coords = storage_coords(shape, strides, np.where(inside, off, 0))
        rowc = coords[:, nd - 2] if nd >= 2 else np.zeros(addrs.size, np.int64)
        colc = coords[:, nd - 1]
        out[r] = inside & (rowc >= rlo) & (rowc <= rhi) & (colc >= clo) & (colc <= chi)
    return out


def circ_conv_rows_numpy(addrs, values, accept, batch_starts, modulus, a) -> np.ndarray:
    addrs = np.asarray(addrs, dtype=np.int64)
    slots = (addrs[None, :] - np.asarray(batch_starts, np.int64)[:, None]) % modulus
    partner = np.asarray(a)[(-slots) % modulus]
    return np.where(accept, partner * np.asarray(values)[None, :], 0).sum(axis=1)


def pade_eval_numpy(a, b, x):
    x = np.asarray(x, dtype=np.float64)
    num = np.zeros_like(x)
    pw = np.ones_like(x)
    for c in a:
        num = num + c * pw
        pw = pw * x
    den = np.ones_like(x)
    pw = x
    for c in b:
        den = den + c * pw
        pw = pw * x
    return num, den


# -- loop implementations (numba targets) --------------------------------------------

def _accept_loop(addrs, windows, shape, strides, order):
    rows = windows.shape[0]
    n = addrs.shape[0]
    nd = shape.shape[0]
    numel = 1
    for d in range(nd):
        numel *= shape[d]
    out = np.zeros((rows, n), dtype=np.bool_)
    for r in range(rows):
        bs = windows[r, 0]
        rlo = windows[r, 1]
        rhi = windows[r, 2]
        clo = windows[r, 3]
        chi = windows[r, 4]
        mod = windows[r, 6]
        for e in range(n):
            if mod > 0:
                out[r, e] = ((addrs[e] - bs) % mod) < (chi - clo + 1)
                continue
            off = addrs[e] - bs
            if off < 0 or off >= numel:
                continue
            rowc = 0
            colc = 0
            rem = off
            for i in range(nd):
                d = order[i]
                c = rem // strides[d]
                rem -= c * strides[d]
                if d == nd - 1:
                    colc = c
                elif d == nd - 2:
                    rowc = c
            out[r, e] = rlo <= rowc <= rhi and clo <= colc <= chi
    return out


def _circ_loop(addrs, values, accept, batch_starts, modulus, a):
    rows = accept.shape[0]
    out = np.zeros(rows, dtype=values.dtype)
    for r in range(rows):
        acc = out[r]
        for e in range(addrs.shape[0]):
            if accept[r, e]:
                slot = (addrs[e] - batch_starts[r]) % modulus
                acc += values[e] * a[(modulus - slot) % modulus]
        out[r] = acc
    return out


def _pade_loop(a, b, x):
    num = np.empty_like(x)
    den = np.empty_like(x)
    for i in range(x.shape[0]):
        xi = x[i]
        acc = 0.0
        pw = 1.0
        for j in range(a.shape[0]):
            acc = acc + a[j] * pw
            pw = pw * xi
        num[i] = acc
        acc = 1.0
        pw = xi
        for j in range(b.shape[0]):
            acc = acc + b[j] * pw
            pw = pw * xi
        den[i] = acc
    return num, den


if njit is not None:
    _accept_jit = njit(cache=True)(_accept_loop)
    _circ_jit = njit(cache=True)(_circ_loop)
    _pade_jit = njit(cache=True)(_pade_loop)


def accept_matrix_numba(addrs, windows, shape, strides) -> np.ndarray:
    shape = np.asarray(shape, dtype=np.int64)
    strides = np.asarray(strides, dtype=np.int64)
    return _accept_jit(np.asarray(addrs, dtype=np.int64),
                       np.ascontiguousarray(windows, dtype=np.int64).reshape(-1, FIELDS),
                       shape, strides, decomposition_order(shape, strides))


def circ_conv_rows_numba(addrs, values, accept, batch_starts, modulus, a) -> np.ndarray:
    values = np.asarray(values)
    return _circ_jit(np.asarray(addrs, np.int64), values, np.asarray(accept, np.bool_),
                     np.asarray(batch_starts, np.int64), int(modulus),
                     np.asarray(a, dtype=values.dtype))


def pade_eval_numba(a, b, x):
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    num, den = _pade_jit(np.asarray(a, np.float64), np.asarray(b, np.float64), x.ravel())
    return num.reshape(shape), den.reshape(shape)


# -- dispatch ------------------------------------------------------------------------

def available_backends() -> tuple[str, ...]:
    return ("numpy", "numba") if njit is not None else ("numpy",)


def _selected() -> str:
    want = os.environ.get("OVERMIND_KERNELS", "numba").strip().lower()
    if want not in ("numpy", "numba"):
        raise ValueError(f"OVERMIND_KERNELS must be 'numpy' or 'numba', got {want!r}")
    return want if want in available_backends() else "numpy"


BACKEND = _selected()

_TABLE = {
    "numpy": (accept_matrix_numpy, circ_conv_rows_numpy, pade_eval_numpy),
}
if njit is not None:
    _TABLE["numba"] = (accept_matrix_numba, circ_conv_rows_numba, pade_eval_numba)


def kernels(backend: str = BACKEND):
    """``(accept_matrix, circ_conv_rows, pade_eval)`` for ``backend``."""
    return _TABLE[backend]


accept_matrix, circ_conv_rows, pade_eval = kernels()
