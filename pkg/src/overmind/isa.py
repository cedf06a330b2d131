"""Instruction bundles and the ``.omp`` program format.

Binary layout, all multi-byte fields little-endian::

    program := b"OMP1" u16 version u16 R u16 C u32 sram_bytes u32 bundle_count
               { u32 length, bundle[length] }*  u32 crc32(all preceding bytes)

    bundle  := u8 opcode  str node_id  u16 tile_index  u16 tile_count
               u8 n_operands  operand*
               u8 n_attrs     { str key, i64 value }*
               u8[ceil(R/8)] row_enable_mask
               u16 n_windows  window*            (one per set mask bit, ascending row)
               u16 rows_used u16 cols_used u16 threads_per_row u8 pade_order u8 divider
               u8 has_pade [ str function_id u8 m u8 n f64 lo f64 hi f32 a[m+1] f32 b[n] ]

    operand := str id  u8 role(0 in, 1 out)  u8 dtype  u8 placement(0 SRAM, 1 DDR)
               u32 base_addr  u8 ndim  u32 dims[ndim]  u32 strides[ndim]
    window  := u32 batch_start u32 row_lo u32 row_hi u32 col_lo u32 col_hi
               u32 circ_offset u32 modulus
    str     := u16 length, utf-8 bytes

The CRC trailer makes any corrupted stream fail to decode instead of yielding
a different valid program.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import FormatError
from .graph import OpKind
from .pade import PadeApproximant
from .tensorio import CODE_DTYPES, DTYPE_CODES

MAGIC = b"OMP1"
VERSION = 1
SUPPORTED_VERSIONS = (1,)

SRAM = "SRAM"
DDR = "DDR"
_PLACEMENTS = (SRAM, DDR)
_ROLES = ("in", "out")


class Opcode(IntEnum):
    MatMul = 1
    Conv2D = 2
    ElemAdd = 3
    ElemMul = 4
    Activation = 5   # exact activation; reserved, the compiler always emits PadeActivate
    CircularConv = 6
    SimilaritySearch = 7
    FuzzyAnd = 8
    FuzzyOr = 9
    FuzzyNot = 10
    PadeActivate = 11

    @classmethod
    def for_kind(cls, kind: OpKind) -> "Opcode":
        if kind == OpKind.Activation:
            return cls.PadeActivate
        return cls[kind.value]


# operand positions filtered by the per-row address windows; the rest are
# broadcast in full to every enabled row
WINDOWED_INPUTS = {
    Opcode.MatMul: (0,), Opcode.Conv2D: (0,), Opcode.ElemAdd: (0, 1), Opcode.ElemMul: (0, 1),
    Opcode.Activation: (0,), Opcode.PadeActivate: (0,), Opcode.CircularConv: (1,),
    Opcode.SimilaritySearch: (1,), Opcode.FuzzyAnd: (0, 1), Opcode.FuzzyOr: (0, 1),
    Opcode.FuzzyNot: (0,),
}


@dataclass(frozen=True)
class OperandDesc:
    tensor_id: str
    role: str
    dtype: str
    base_addr: int
    shape: tuple[int, ...]
    strides: tuple[int, ...]
    placement: str = SRAM

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class AddressWindowConfig:
    batch_start: int
    row_lo: int
    row_hi: int
    col_lo: int
    col_hi: int
    circ_offset: int = 0
    modulus: int = 0

    @property
    def window_length(self) -> int:
        return self.col_hi - self.col_lo + 1

    def problem(self) -> Optional[str]:
        vals = (self.batch_start, self.row_lo, self.row_hi, self.col_lo, self.col_hi,
                self.circ_offset, self.modulus)
        if any(v < 0 for v in vals):
            return "window fields must be non-negative"
        if self.row_lo > self.row_hi or self.col_lo > self.col_hi:
            return "window bounds must satisfy lo <= hi"
        if self.modulus > 0:
            if self.circ_offset >= self.modulus or self.batch_start >= self.modulus:
                return "circular offset and batch start must be below the modulus"
            if self.window_length > self.modulus:
                return "window length exceeds the modulus"
        return None


@dataclass(frozen=True)
class PEConfig:
    rows_used: int
    cols_used: int
    threads_per_row: int = 1
    pade_order: int = 0
    divider_enabled: bool = False


@dataclass(frozen=True)
class InstructionBundle:
    opcode: Opcode
    node_id: str
    operands: tuple[OperandDesc, ...]
    windows: tuple[AddressWindowConfig, ...]
    row_enable_mask: int
    pe_config: PEConfig
    attrs: tuple[tuple[str, int], ...] = ()
    pade: Optional[PadeApproximant] = None
    tile_index: int = 0
    tile_count: int = 1

    @property
    def inputs(self) -> tuple[OperandDesc, ...]:
        return tuple(o for o in self.operands if o.role == "in")

    @property
    def output(self) -> OperandDesc:
        return next(o for o in self.operands if o.role == "out")

    def attr(self, key: str, default=None):
        for k, v in self.attrs:
            if k == key:
                return v
        return default

    def enabled_rows(self) -> list[int]:
        return [r for r in range(self.row_enable_mask.bit_length())
                if self.row_enable_mask >> r & 1]


@dataclass(frozen=True)
class Program:
    R: int
    C: int
    sram_bytes: int
    bundles: tuple[InstructionBundle, ...] = ()
    version: int = VERSION


# -- validation ----------------------------------------------------------------

def _f32_exact(values) -> bool:
    arr = np.asarray(values, dtype=np.float64)
    return bool(np.all(arr.astype(np.float32).astype(np.float64) == arr))


def validate_program(p: Program) -> None:
    if p.version not in SUPPORTED_VERSIONS:
        raise FormatError(f"unsupported version {p.version}")
    if not (1 <= p.R <= 0xFFFF and 1 <= p.C <= 0xFFFF and 0 <= p.sram_bytes <= 0xFFFFFFFF):
        raise FormatError("header fields out of range")
    seen: dict[str, OperandDesc] = {}
    for i, b in enumerate(p.bundles):
        err = _bundle_problem(p, b, seen)
        if err:
            raise FormatError(err, bundle_index=i)


def _bundle_problem(p: Program, b: InstructionBundle, seen) -> Optional[str]:
    if not isinstance(b.opcode, Opcode):
        return "unknown opcode"
    outs = [o for o in b.operands if o.role == "out"]
    if len(outs) != 1:
        return "bundle must have exactly one output operand"
    n_in = len(b.operands) - 1
    if max(WINDOWED_INPUTS[b.opcode]) >= n_in:
        return "too few input operands for opcode"
    for o in b.operands:
        if o.role not in _ROLES or o.dtype not in DTYPE_CODES or o.placement not in _PLACEMENTS:
            return f"operand {o.tensor_id!r} has an invalid role/dtype/placement"
        if len(o.shape) != len(o.strides) or not o.shape or any(d < 1 for d in o.shape):
            return f"operand {o.tensor_id!r} has an invalid shape"
        prev = seen.setdefault(o.tensor_id, o)
        if (prev.shape, prev.strides, prev.dtype, prev.base_addr) != \
                (o.shape, o.strides, o.dtype, o.base_addr):
            return f"operand {o.tensor_id!r} redeclared with a different layout"
    if b.row_enable_mask < 0 or b.row_enable_mask >> p.R:
        return "row enable mask has bits beyond R"
    if len(b.windows) > p.R:
        return "window table longer than R"
    if bin(b.row_enable_mask).count("1") != len(b.windows):
        return "row enable mask does not match the window table"
    for w in b.windows:
        err = w.problem()
        if err:
            return err
    pe = b.pe_config
    if not 0 <= pe.cols_used <= p.C or not 0 <= pe.rows_used <= p.R:
        return "PE configuration exceeds the array"
    if pe.threads_per_row < 1:
        return "threads_per_row must be >= 1"
    k = pe.pade_order
    if k > 0:
        if b.opcode != Opcode.PadeActivate:
            return "pade_order set on a non-Padé bundle"
        if not pe.divider_enabled or pe.cols_used != 2 * k or pe.threads_per_row != p.C // (2 * k):
            return f"PE configuration inconsistent with Padé order {k}"
        if b.pade is None:
            return "Padé bundle without coefficient payload"
        if b.pade.m != k or b.pade.n != k:
            return (f"Padé order {k} but payload has {b.pade.m + 1} numerator and "
                    f"{b.pade.n} denominator coefficients")
    elif b.opcode == Opcode.PadeActivate:
        return "PadeActivate bundle with pade_order 0"
    elif b.pade is not None:
        return "coefficient payload on a non-Padé bundle"
    if b.pade is not None and not (_f32_exact(b.pade.a) and _f32_exact(b.pade.b)):
        return "Padé coefficients must be representable in f32"
    if not 0 <= b.tile_index < b.tile_count:
        return "tile index out of range"
    return None


# -- encoding ------------------------------------------------------------------

def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _encode_bundle(p: Program, b: InstructionBundle) -> bytes:
    out = [struct.pack("<B", int(b.opcode)), _str(b.node_id),
           struct.pack("<HHB", b.tile_index, b.tile_count, len(b.operands))]
    for o in b.operands:
        out.append(_str(o.tensor_id))
        out.append(struct.pack("<BBBIB", _ROLES.index(o.role), DTYPE_CODES[o.dtype],
                               _PLACEMENTS.index(o.placement), o.base_addr, len(o.shape)))
        out.append(struct.pack(f"<{len(o.shape)}I", *o.shape))
        out.append(struct.pack(f"<{len(o.strides)}I", *o.strides))
    out.append(struct.pack("<B", len(b.attrs)))
    for key, val in b.attrs:
        out.append(_str(key) + struct.pack("<q", val))
    out.append(b.row_enable_mask.to_bytes((p.R + 7) // 8, "little"))
    out.append(struct.pack("<H", len(b.windows)))
    for w in b.windows:
        out.append(struct.pack("<7I", w.batch_start, w.row_lo, w.row_hi, w.col_lo, w.col_hi,
                               w.circ_offset, w.modulus))
    pe = b.pe_config
    out.append(struct.pack("<HHHBB", pe.rows_used, pe.cols_used, pe.threads_per_row,
                           pe.pade_order, int(pe.divider_enabled)))
    if b.pade is None:
        out.append(b"\x00")
    else:
        q = b.pade
        out.append(b"\x01" + _str(q.function_id) + struct.pack("<BBdd", q.m, q.n, *q.range))
        out.append(struct.pack(f"<{q.m + 1}f", *q.a) + struct.pack(f"<{q.n}f", *q.b))
    return b"".join(out)


def encode(p: Program) -> bytes:
    validate_program(p)
    body = [MAGIC, struct.pack("<HHHII", p.version, p.R, p.C, p.sram_bytes, len(p.bundles))]
    for b in p.bundles:
        try:
            raw = _encode_bundle(p, b)
        except (struct.error, OverflowError) as e:
            raise FormatError(f"field out of range: {e}") from None
        body.append(struct.pack("<I", len(raw)) + raw)
    data = b"".join(body)
    return data + struct.pack("<I", zlib.crc32(data))


class _Reader:
    def __init__(self, data: bytes, start: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > self.end:
            raise FormatError("truncated payload", offset=self.pos)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def one(self, fmt: str):
        return self.take(fmt)[0]

    def raw(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise FormatError("truncated payload", offset=self.pos)
        chunk = self.data[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def string(self) -> str:
        n = self.one("<H")
        at = self.pos
        try:
            return self.raw(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("invalid utf-8 string", offset=at) from None


def _decode_bundle(r: _Reader, R: int, index: int) -> InstructionBundle:
    at = r.pos
    code = r.one("<B")
    try:
        opcode = Opcode(code)
    except ValueError:
        raise FormatError(f"unknown opcode {code}", offset=at, bundle_index=index) from None
    node_id = r.string()
    tile_index, tile_count, n_ops = r.take("<HHB")
    operands = []
    for _ in range(n_ops):
        tid = r.string()
        at = r.pos
        role, dt, place, base, ndim = r.take("<BBBIB")
        if role >= len(_ROLES) or dt not in CODE_DTYPES or place >= len(_PLACEMENTS):
            raise FormatError("invalid operand descriptor", offset=at, bundle_index=index)
        dims = r.take(f"<{ndim}I")
        strides = r.take(f"<{ndim}I")
        operands.append(OperandDesc(tid, _ROLES[role], CODE_DTYPES[dt], base, dims, strides,
                                    _PLACEMENTS[place]))
    attrs = []
    for _ in range(r.one("<B")):
        key = r.string()
        attrs.append((key, r.one("<q")))
    mask = int.from_bytes(r.raw((R + 7) // 8), "little")
    windows = tuple(AddressWindowConfig(*r.take("<7I")) for _ in range(r.one("<H")))
    rows, cols, threads, k, div = r.take("<HHHBB")
    if div > 1:
        raise FormatError("divider flag must be 0 or 1", offset=r.pos - 1, bundle_index=index)
    pe = PEConfig(rows, cols, threads, k, bool(div))
    at = r.pos
    has_pade = r.one("<B")
    pade = None
    if has_pade == 1:
        fid = r.string()
        m, n, lo, hi = r.take("<BBdd")
        a = r.take(f"<{m + 1}f")
        b = r.take(f"<{n}f")
        try:
            pade = PadeApproximant(m, n, a, b, (lo, hi), fid)
        except ValueError as e:
            raise FormatError(f"invalid Padé payload: {e}", offset=at,
                              bundle_index=index) from None
    elif has_pade != 0:
        raise FormatError("invalid Padé presence flag", offset=at, bundle_index=index)
    return InstructionBundle(opcode, node_id, tuple(operands), windows, mask, pe, tuple(attrs),
                             pade, tile_index, tile_count)


def decode(data: bytes) -> Program:
    data = bytes(data)
    if data[:4] != MAGIC:
        raise FormatError("bad magic", offset=0)
    r = _Reader(data, 4)
    version, R, C, sram, count = r.take("<HHHII")
    if version not in SUPPORTED_VERSIONS:
        raise FormatError(f"unsupported version {version}", offset=4)
    if len(data) < r.pos + 4:
        raise FormatError("missing checksum", offset=len(data))
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError("checksum mismatch", offset=len(data) - 4)
    r.end = len(data) - 4
    if R < 1 or C < 1:
        raise FormatError("R and C must be >= 1", offset=6)
    bundles = []
    for i in range(count):
        length = r.one("<I")
        end = r.pos + length
        if end > r.end:
            raise FormatError("bundle length overruns payload", offset=r.pos, bundle_index=i)
        sub = _Reader(data, r.pos, end)
        bundles.append(_decode_bundle(sub, R, i))
        if sub.pos != end:
            raise FormatError("trailing bytes inside bundle", offset=sub.pos, bundle_index=i)
        r.pos = end
    if r.pos != r.end:
        raise FormatError("trailing bytes after last bundle", offset=r.pos)
    prog = Program(R, C, sram, tuple(bundles), version)
    validate_program(prog)
    return prog


def save_program(path, p: Program) -> None:
    with open(path, "wb") as f:
        f.write(encode(p))


def load_program(path) -> Program:
    with open(path, "rb") as f:
        return decode(f.read())


# -- disassembly ---------------------------------------------------------------

def _window_summary(b: InstructionBundle) -> str:
    if not b.windows:
        return "win=0"
    w0, wl = b.windows[0], b.windows[-1]

    def fmt(w):
        s = f"bs={w.batch_start},r={w.row_lo}:{w.row_hi},c={w.col_lo}:{w.col_hi}"
        if w.modulus:
            s += f",off={w.circ_offset},mod={w.modulus}"
        return s

    text = f"win={len(b.windows)} [{fmt(w0)}]"
    if len(b.windows) > 1:
        text += f"..[{fmt(wl)}]"
    return text


def disassemble(p: Program) -> str:
    lines = [f"; omp v{p.version} R={p.R} C={p.C} sram={p.sram_bytes} bundles={len(p.bundles)}"]
    width = (p.R + 3) // 4
    for i, b in enumerate(p.bundles):
        pe = b.pe_config
        parts = [f"{i:04d}", f"{b.opcode.name:<16}", f"node={b.node_id}",
                 f"tile={b.tile_index + 1}/{b.tile_count}", f"rows={pe.rows_used}"]
        if pe.pade_order:
            parts.append(f"pade={pe.pade_order} cols={pe.cols_used}")
        else:
            parts.append(f"cols={pe.cols_used}")
        parts.append(f"threads={pe.threads_per_row}")
        parts.append(f"div={'on' if pe.divider_enabled else 'off'}")
        parts.append(f"mask=0x{b.row_enable_mask:0{width}x}")
        parts.append(_window_summary(b))
        parts.extend(f"{k}={v}" for k, v in b.attrs)
        parts.append("place=" + ",".join(f"{o.tensor_id}:{o.placement}" for o in b.operands))
        if b.pade is not None:
            parts.append(f"fn={b.pade.function_id}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
