# series.py

"""
Truncated multivariate power series in the complexified fast pair (u, v),
the 2n slow variables (y1_1..y1_n, y2_1..y2_n) and the formal parameter eps.

The fast pair is related to the real canonical pair by

    q = (u + i v) / sqrt(2),    p = (v + i u) / sqrt(2),

so that I = (q^2 + p^2) / 2 = i u v and {q, p} = 1 reads a_u b_v - a_v b_u.
Coefficients are plain monomial coefficients stored in a dense complex array
of shape (D+1, D+1, S+1, ..., S+1, E+1); entries outside the graded bounds
(k + l <= D, sum(slow) <= S) are always zero.
"""

import json
import logging
import math
import re
from functools import lru_cache
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    DegreeOverflowError,
    DimensionMismatchError,
    PolicyMismatchError,
    UnknownVariableError,
)
from models import SeriesDocument, TruncationPolicy

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
DROP_ON_WRITE = 1e-15

Scalar = Union[int, float, complex]


class MultiIndex(NamedTuple):
    k: int
    l: int
    slow: Tuple[int, ...]
    e: int


class SamplePoint(NamedTuple):
    q: float
    p: float
    y: Tuple[float, ...]
    eps: float


# --------- Policy helpers ---------

def shape_of(policy: TruncationPolicy) -> Tuple[int, ...]:
    d = policy.max_uv_degree + 1
    s = policy.max_slow_degree + 1
    return (d, d) + (s,) * (2 * policy.n_slow_pairs) + (policy.max_eps_order + 1,)


@lru_cache(maxsize=64)
def admissible_mask(policy: TruncationPolicy) -> np.ndarray:
    shape = shape_of(policy)
    grids = np.indices(shape, sparse=True)
    uv = grids[0] + grids[1]
    slow = sum(grids[2:-1])
    mask = np.broadcast_to((uv <= policy.max_uv_degree) & (slow <= policy.max_slow_degree), shape).copy()
    mask.flags.writeable = False
    return mask


@lru_cache(maxsize=64)
def _excluded_mask(policy: TruncationPolicy) -> np.ndarray:
    excluded = ~admissible_mask(policy)
    excluded.flags.writeable = False
    return excluded


@lru_cache(maxsize=64)
def diagonal_mask(policy: TruncationPolicy) -> np.ndarray:
    """True on the k == l (phase-independent) monomials"""
    shape = shape_of(policy)
    grids = np.indices(shape, sparse=True)
    mask = np.broadcast_to(grids[0] == grids[1], shape) & admissible_mask(policy)
    mask.flags.writeable = False
    return mask


@lru_cache(maxsize=64)
def phase_weights(policy: TruncationPolicy) -> np.ndarray:
    """k - l on every cell; u^k v^l picks up exp(i (k - l) phi) on a circle"""
    shape = shape_of(policy)
    grids = np.indices(shape, sparse=True)
    weights = np.broadcast_to(grids[0] - grids[1], shape).copy()
    weights.flags.writeable = False
    return weights


_SLOW_NAME = re.compile(r"^y([12])_(\d+)$")


def slow_names(policy: TruncationPolicy) -> List[str]:
    n = policy.n_slow_pairs
    return [f"y1_{j}" for j in range(1, n + 1)] + [f"y2_{j}" for j in range(1, n + 1)]


def axis_of(policy: TruncationPolicy, var: str) -> int:
    """Array axis carrying the exponent of a variable"""
    if var == "u":
        return 0
    if var == "v":
        return 1
    if var in ("eps", "e"):
        return 2 + 2 * policy.n_slow_pairs
    match = _SLOW_NAME.match(var)
    if match:
        family, j = int(match.group(1)), int(match.group(2))
        if 1 <= j <= policy.n_slow_pairs:
            return 2 + (family - 1) * policy.n_slow_pairs + (j - 1)
    raise UnknownVariableError(f"Unknown variable '{var}'")


def _require_same_policy(a: "TruncatedSeries", b: "TruncatedSeries") -> None:
    if a.policy != b.policy:
        raise PolicyMismatchError(f"Policies differ: {a.policy} vs {b.policy}")


# --------- Series ---------

class TruncatedSeries:
    """Immutable truncated series; every operation returns a new value"""

    __slots__ = ("policy", "_data", "_real")

    def __init__(self, policy: TruncationPolicy, data: Optional[np.ndarray] = None, real: bool = False):
        shape = shape_of(policy)
        if data is None:
            arr = np.zeros(shape, dtype=complex)
        else:
            arr = np.array(data, dtype=complex)
            if arr.shape != shape:
                raise DimensionMismatchError(f"Coefficient array has shape {arr.shape}, policy needs {shape}")
            arr[_excluded_mask(policy)] = 0
        arr.flags.writeable = False
        self.policy = policy
        self._data = arr
        self._real = bool(real)

    @classmethod
    def _wrap(cls, policy: TruncationPolicy, arr: np.ndarray, real: bool) -> "TruncatedSeries":
        # arr must be freshly allocated and already truncated
        new = cls.__new__(cls)
        arr.flags.writeable = False
        new.policy = policy
        new._data = arr
        new._real = bool(real)
        return new

    @property
    def real(self) -> bool:
        """True when the series is real on real (q, p, y, eps)"""
        return self._real

    # ---- views ----

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self._data))

    @property
    def coefficients(self) -> Dict[MultiIndex, complex]:
        return dict(self.terms())

    def terms(self) -> Iterator[Tuple[MultiIndex, complex]]:
        for idx in zip(*np.nonzero(self._data)):
            yield _to_multi_index(idx), complex(self._data[idx])

    def coefficient(self, index: Union[MultiIndex, Sequence[int]]) -> complex:
        idx = _to_array_index(self.policy, index)
        if idx is None:
            return 0j
        return complex(self._data[idx])

    def constant_term(self) -> complex:
        return complex(self._data[(0,) * self._data.ndim])

    def max_abs(self) -> float:
        return float(np.abs(self._data).max()) if self._data.size else 0.0

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.max_abs() <= tol

    def is_diagonal(self, tol: float = 0.0) -> bool:
        off = np.where(diagonal_mask(self.policy), 0, self._data)
        return float(np.abs(off).max()) <= tol

    def allclose(self, other: "TruncatedSeries", tol: float = 1e-12) -> bool:
        _require_same_policy(self, other)
        return float(np.abs(self._data - other._data).max()) <= tol

    # ---- graded helpers ----

    def lowest_eps_order(self, tol: float = 0.0) -> Optional[int]:
        """Smallest power of eps carrying a coefficient above tol, None for zero"""
        per_order = np.abs(self._data).reshape(-1, self._data.shape[-1]).max(axis=0)
        hits = np.nonzero(per_order > tol)[0]
        return int(hits[0]) if hits.size else None

    def eps_range(self, lo: int, hi: Optional[int] = None) -> "TruncatedSeries":
        """Keep the powers eps^lo .. eps^hi"""
        arr = np.zeros_like(self._data)
        stop = self._data.shape[-1] if hi is None else hi + 1
        arr[..., lo:stop] = self._data[..., lo:stop]
        return TruncatedSeries._wrap(self.policy, arr, self.real)

    def eps_part(self, order: int) -> "TruncatedSeries":
        return self.eps_range(order, order)

    def eps_shift(self, n: int) -> "TruncatedSeries":
        """Multiply by eps^n; negative n divides and needs the low orders to vanish"""
        if n == 0:
            return self
        width = self._data.shape[-1]
        arr = np.zeros_like(self._data)
        if n > 0:
            if n < width:
                arr[..., n:] = self._data[..., : width - n]
        else:
            m = -n
            if self._data[..., :m].any():
                raise ValueError(f"Series is not divisible by eps^{m}")
            if m < width:
                arr[..., : width - m] = self._data[..., m:]
        return TruncatedSeries._wrap(self.policy, arr, self.real)

    def chop(self, tol: float) -> "TruncatedSeries":
        arr = np.where(np.abs(self._data) <= tol, 0, self._data)
        return TruncatedSeries._wrap(self.policy, arr, self.real)

    def with_real(self, real: bool) -> "TruncatedSeries":
        """Same coefficients under another reality flag"""
        return TruncatedSeries._wrap(self.policy, self._data, real)

    # ---- arithmetic ----

    def _coerce(self, other) -> "TruncatedSeries":
        if isinstance(other, TruncatedSeries):
            _require_same_policy(self, other)
            return other
        if isinstance(other, (int, float, complex, np.number)):
            return constant(self.policy, other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return add(self, other)

    __radd__ = __add__

    def __neg__(self) -> "TruncatedSeries":
        return TruncatedSeries._wrap(self.policy, -self._data, self.real)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return add(self, -other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return add(other, -self)

    def __mul__(self, other):
        if isinstance(other, TruncatedSeries):
            return mul(self, other)
        if isinstance(other, (int, float, complex, np.number)):
            real = self.real and complex(other).imag == 0
            return TruncatedSeries._wrap(self.policy, self._data * other, real)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self * (1.0 / other)
        return NotImplemented

    def __pow__(self, power: int) -> "TruncatedSeries":
        if not isinstance(power, (int, np.integer)) or power < 0:
            raise ValueError("Only nonnegative integer powers are supported")
        result = one(self.policy)
        base = self
        while power:
            if power & 1:
                result = mul(result, base)
            power >>= 1
            if power:
                base = mul(base, base)
        return result

    def __call__(self, point: Union[SamplePoint, Sequence]) -> complex:
        return evaluate(self, point)

    def __repr__(self) -> str:
        return f"TruncatedSeries(nnz={self.nnz}, real={self.real}, policy={self.policy!r})"


def _to_multi_index(idx: Tuple[int, ...]) -> MultiIndex:
    return MultiIndex(int(idx[0]), int(idx[1]), tuple(int(s) for s in idx[2:-1]), int(idx[-1]))


def _to_array_index(policy: TruncationPolicy, index) -> Optional[Tuple[int, ...]]:
    if isinstance(index, MultiIndex):
        idx = (index.k, index.l, *index.slow, index.e)
    else:
        idx = tuple(int(i) for i in index)
    shape = shape_of(policy)
    if len(idx) != len(shape):
        raise DimensionMismatchError(f"Index {index} has {len(idx)} entries, policy needs {len(shape)}")
    if any(i < 0 or i >= n for i, n in zip(idx, shape)):
        return None
    if not admissible_mask(policy)[idx]:
        return None
    return idx


# --------- Constructors ---------

def zero(policy: TruncationPolicy) -> TruncatedSeries:
    return TruncatedSeries(policy, real=True)


def constant(policy: TruncationPolicy, value: Scalar) -> TruncatedSeries:
    arr = np.zeros(shape_of(policy), dtype=complex)
    arr[(0,) * arr.ndim] = value
    return TruncatedSeries._wrap(policy, arr, complex(value).imag == 0)


def one(policy: TruncationPolicy) -> TruncatedSeries:
    return constant(policy, 1.0)


def from_terms(
    policy: TruncationPolicy,
    terms: Mapping[Union[MultiIndex, Tuple[int, ...]], Scalar],
    real: bool = False,
) -> TruncatedSeries:
    """Build a series from explicit monomials; indices beyond the policy are dropped"""
    arr = np.zeros(shape_of(policy), dtype=complex)
    for index, value in terms.items():
        idx = _to_array_index(policy, index)
        if idx is not None:
            arr[idx] += value
    return TruncatedSeries._wrap(policy, arr, real)


def variable(policy: TruncationPolicy, name: str) -> TruncatedSeries:
    """Coordinate series: u, v, q, p, I (the action), eps or a slow variable"""
    arr = np.zeros(shape_of(policy), dtype=complex)
    ndim = arr.ndim
    unit = [0] * ndim

    def put(axis_powers: Dict[int, int], value: complex) -> None:
        idx = list(unit)
        for axis, power in axis_powers.items():
            idx[axis] = power
        idx = tuple(idx)
        if all(i < n for i, n in zip(idx, arr.shape)) and admissible_mask(policy)[idx]:
            arr[idx] = value

    if name == "q":
        put({0: 1}, 1 / SQRT2)
        put({1: 1}, 1j / SQRT2)
        return TruncatedSeries._wrap(policy, arr, True)
    if name == "p":
        put({1: 1}, 1 / SQRT2)
        put({0: 1}, 1j / SQRT2)
        return TruncatedSeries._wrap(policy, arr, True)
    if name == "I":
        put({0: 1, 1: 1}, 1j)
        return TruncatedSeries._wrap(policy, arr, True)
    axis = axis_of(policy, name)
    put({axis: 1}, 1.0)
    return TruncatedSeries._wrap(policy, arr, axis >= 2)


def from_action_polynomial(coeffs: Sequence[float], policy: TruncationPolicy) -> TruncatedSeries:
    """sum_j c_j I^j with I = i u v, i.e. c_j i^j on the (j, j) diagonal"""
    degree = len(coeffs) - 1
    if 2 * degree > policy.max_uv_degree:
        raise DegreeOverflowError(
            f"I^{degree} needs max_uv_degree >= {2 * degree}, policy has {policy.max_uv_degree}"
        )
    arr = np.zeros(shape_of(policy), dtype=complex)
    zeros = (0,) * (2 * policy.n_slow_pairs + 1)
    for j, c in enumerate(coeffs):
        arr[(j, j) + zeros] = c * (1j ** j)
    real = all(complex(c).imag == 0 for c in coeffs)
    return TruncatedSeries._wrap(policy, arr, real)


# --------- Algebra ---------

def add(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    _require_same_policy(a, b)
    return TruncatedSeries._wrap(a.policy, a._data + b._data, a.real and b.real)


def _convolve(a: np.ndarray, b: np.ndarray, policy: TruncationPolicy) -> np.ndarray:
    # loop over the sparser operand, shift-and-add the other one
    if np.count_nonzero(a) > np.count_nonzero(b):
        a, b = b, a
    out = np.zeros_like(b)
    if not b.any():
        return out
    shape = b.shape
    for idx in zip(*np.nonzero(a)):
        dst = tuple(slice(i, None) for i in idx)
        src = tuple(slice(0, n - i) for n, i in zip(shape, idx))
        out[dst] += a[idx] * b[src]
    out[_excluded_mask(policy)] = 0
    return out


def mul(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    _require_same_policy(a, b)
    return TruncatedSeries._wrap(a.policy, _convolve(a._data, b._data, a.policy), a.real and b.real)


def _diff_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(arr)
    n = arr.shape[axis]
    if n > 1:
        shape = [1] * arr.ndim
        shape[axis] = n - 1
        factors = np.arange(1, n).reshape(shape)
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        src[axis] = slice(1, None)
        dst[axis] = slice(0, n - 1)
        out[tuple(dst)] = arr[tuple(src)] * factors
    return out


def diff(a: TruncatedSeries, var: str) -> TruncatedSeries:
    """Formal partial derivative in u, v, q, p, eps or a slow variable"""
    if var == "q":
        arr = (_diff_axis(a._data, 0) - 1j * _diff_axis(a._data, 1)) / SQRT2
        return TruncatedSeries._wrap(a.policy, arr, a.real)
    if var == "p":
        arr = (-1j * _diff_axis(a._data, 0) + _diff_axis(a._data, 1)) / SQRT2
        return TruncatedSeries._wrap(a.policy, arr, a.real)
    axis = axis_of(a.policy, var)
    return TruncatedSeries._wrap(a.policy, _diff_axis(a._data, axis), a.real and axis >= 2)


def poisson_fast(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    """{a, b} in (q, p), computed as a_u b_v - a_v b_u"""
    _require_same_policy(a, b)
    policy = a.policy
    arr = _convolve(_diff_axis(a._data, 0), _diff_axis(b._data, 1), policy)
    arr -= _convolve(_diff_axis(a._data, 1), _diff_axis(b._data, 0), policy)
    return TruncatedSeries._wrap(policy, arr, a.real and b.real)


def poisson_slow(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    """sum_j a_{y1j} b_{y2j} - a_{y2j} b_{y1j}"""
    _require_same_policy(a, b)
    policy = a.policy
    n = policy.n_slow_pairs
    arr = np.zeros_like(a._data)
    for j in range(n):
        ax1, ax2 = 2 + j, 2 + n + j
        arr += _convolve(_diff_axis(a._data, ax1), _diff_axis(b._data, ax2), policy)
        arr -= _convolve(_diff_axis(a._data, ax2), _diff_axis(b._data, ax1), policy)
    return TruncatedSeries._wrap(policy, arr, a.real and b.real)


def _powers(x: TruncatedSeries, top: int) -> List[TruncatedSeries]:
    powers = [one(x.policy)]
    for _ in range(top):
        powers.append(mul(powers[-1], x))
    return powers


def compose(
    f: TruncatedSeries,
    dq: Optional[TruncatedSeries] = None,
    dp: Optional[TruncatedSeries] = None,
    dslow: Optional[Sequence[Optional[TruncatedSeries]]] = None,
) -> TruncatedSeries:
    """
    Near-identity substitution f(q + dq, p + dp, y + dy, eps).

    The shifts must carry at least one power of eps (or be small in the
    graded sense) so that every power of the shifted variables stays inside
    the truncated algebra. Slot j of dslow shifts the j-th slow variable in
    the order y1_1..y1_n, y2_1..y2_n.
    """
    policy = f.policy
    n_slow = 2 * policy.n_slow_pairs
    nil = zero(policy)
    dq = nil if dq is None else dq
    dp = nil if dp is None else dp
    shifts = list(dslow) if dslow is not None else []
    if len(shifts) not in (0, n_slow):
        raise DimensionMismatchError(f"dslow needs {n_slow} entries, got {len(shifts)}")
    shifts = [nil if s is None else s for s in shifts] or [nil] * n_slow
    for shift in (dq, dp, *shifts):
        _require_same_policy(f, shift)
    if not f._data.any():
        return nil

    max_uv = policy.max_uv_degree
    big_u = variable(policy, "u") + (dq - 1j * dp) / SQRT2
    big_v = variable(policy, "v") + (dp - 1j * dq) / SQRT2
    upow = _powers(big_u, max_uv)
    vpow = _powers(big_v, max_uv)

    data = f._data
    real = f.real and all(s.real for s in (dq, dp, *shifts))
    out = np.zeros_like(data)
    blocks = [
        (k, l)
        for k in range(max_uv + 1)
        for l in range(max_uv + 1 - k)
        if data[k, l].any()
    ]
    slow_moves = any(s._data.any() for s in shifts)

    if not slow_moves:
        for k, l in blocks:
            inner = np.zeros_like(data)
            inner[0, 0] = data[k, l]
            out += _convolve(mul(upow[k], vpow[l])._data, inner, policy)
        return TruncatedSeries._wrap(policy, out, real)

    # slow monomials prod_j (y_j + dy_j)^{s_j}, built on demand
    slow_vars = [variable(policy, name) + shifts[j] for j, name in enumerate(slow_names(policy))]
    block_shape = data.shape[2:-1]
    needed = sorted(
        {tuple(int(i) for i in idx) for idx in zip(*np.nonzero(np.abs(data).sum(axis=(0, 1, data.ndim - 1))))},
        key=lambda s: (sum(s), s),
    )
    monomials: Dict[Tuple[int, ...], TruncatedSeries] = {(0,) * len(block_shape): one(policy)}

    def monomial(s: Tuple[int, ...]) -> TruncatedSeries:
        if s not in monomials:
            j = next(i for i, power in enumerate(s) if power)
            lower = s[:j] + (s[j] - 1,) + s[j + 1:]
            monomials[s] = mul(monomial(lower), slow_vars[j])
        return monomials[s]

    stack = np.stack([monomial(s)._data for s in needed])
    width = data.shape[-1]
    for k, l in blocks:
        coeffs = np.stack([data[(k, l) + s] for s in needed])
        inner = np.zeros_like(data)
        for e in range(width):
            if coeffs[:, e].any():
                contracted = np.tensordot(coeffs[:, e], stack, axes=1)
                inner[..., e:] += contracted[..., : width - e]
        out += _convolve(mul(upow[k], vpow[l])._data, inner, policy)
    out[_excluded_mask(policy)] = 0
    return TruncatedSeries._wrap(policy, out, real)


# --------- Evaluation ---------

def _power_table(base: np.ndarray, size: int) -> np.ndarray:
    return base[:, None] ** np.arange(size)


def evaluate_many(a: TruncatedSeries, q, p, y, eps) -> np.ndarray:
    """Vectorised evaluation; q, p, eps broadcast against y[..., 0]"""
    policy = a.policy
    n_slow = 2 * policy.n_slow_pairs
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or y.shape[-1] != n_slow:
        raise DimensionMismatchError(f"Slow point needs {n_slow} entries, got shape {y.shape}")
    q, p, eps, y0 = np.broadcast_arrays(
        np.asarray(q, dtype=float), np.asarray(p, dtype=float), np.asarray(eps, dtype=float), y[..., 0]
    )
    batch_shape = q.shape
    y = np.broadcast_to(y, batch_shape + (n_slow,)).reshape(-1, n_slow)
    q, p, eps = q.reshape(-1), p.reshape(-1), eps.reshape(-1)

    u = (q - 1j * p) / SQRT2
    v = (p - 1j * q) / SQRT2
    bases = [u, v] + [y[:, j].astype(complex) for j in range(n_slow)] + [eps.astype(complex)]
    shape = a._data.shape
    letters = "abcdefghijklmnopqrstuvwxy"[: len(shape)]
    operands = [a._data] + [_power_table(base, size) for base, size in zip(bases, shape)]
    subscripts = letters + "," + ",".join("z" + letter for letter in letters) + "->z"
    values = np.einsum(subscripts, *operands, optimize=True)
    return values.reshape(batch_shape)


def evaluate(a: TruncatedSeries, point: Union[SamplePoint, Sequence]) -> complex:
    q, p, y, eps = point
    return complex(evaluate_many(a, q, p, np.asarray(y, dtype=float), eps))


def check_reality(a: TruncatedSeries, points: Sequence[SamplePoint], rtol: float = 1e-12) -> bool:
    """Imaginary part of every sampled value within rtol of the real magnitude"""
    for point in points:
        value = evaluate(a, point)
        if abs(value.imag) > rtol * abs(value.real) + 1e-300:
            return False
    return True


# --------- Serialization ---------

def to_document(a: TruncatedSeries) -> SeriesDocument:
    records = []
    for index, value in a.terms():
        if abs(value) < DROP_ON_WRITE:
            continue
        records.append([index.k, index.l, *index.slow, index.e, value.real, value.imag])
    return SeriesDocument(policy=a.policy, real=a.real, terms=records)


def from_document(doc: SeriesDocument) -> TruncatedSeries:
    policy = doc.policy
    width = 2 * policy.n_slow_pairs + 5
    terms: Dict[Tuple[int, ...], complex] = {}
    for record in doc.terms:
        if len(record) != width:
            raise DimensionMismatchError(f"Series record {record} needs {width} entries")
        idx = tuple(int(i) for i in record[:-2])
        terms[idx] = terms.get(idx, 0j) + complex(record[-2], record[-1])
    return from_terms(policy, terms, real=doc.real)


def dumps(a: TruncatedSeries) -> str:
    return json.dumps(to_document(a).model_dump(mode="json"))


def loads(text: str) -> TruncatedSeries:
    return from_document(SeriesDocument.model_validate(json.loads(text)))
