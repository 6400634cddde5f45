"""Deterministic numeric kernel: float32 matrix ops, a seeded PRNG, and
polynomial least squares.

Matrices are plain 2-D C-contiguous ``numpy.float32`` arrays (row-major), which
is exactly the storage contract the rest of the package assumes.  Feature math
runs in float32; statistics and the polynomial normal equations run in float64
to keep conditioning under control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, ShapeError

Matrix = np.ndarray  # 2-D float32, row-major

_MASK64 = (1 << 64) - 1

# splitmix64 constants (Steele, Lea & Flood); used for seeding and seed-splitting
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_MUL1 = 0xBF58476D1CE4E5B9
_SM64_MUL2 = 0x94D049BB133111EB

# xorshift64* output multiplier (Vigna)
_XS64_MUL = 0x2545F4914F6CDD1D


def mix64(x: int) -> int:
    """splitmix64 finalizer: a 64-bit bijective mixing function.

    Used to derive decorrelated sub-seeds (e.g. one seed per network block).
    """
    z = (x + _SM64_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _SM64_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM64_MUL2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """xorshift64* generator seeded through splitmix64.

    Identical seeds produce identical streams.  The exact constants are fixed
    above so any run is reproducible within this implementation; bit-exactness
    across other implementations is not a goal.
    """

    def __init__(self, seed: int):
        state = mix64(seed & _MASK64)
        # xorshift state must never be zero
        self._state = state if state != 0 else _SM64_GAMMA

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * _XS64_MUL) & _MASK64

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def fill_u64(self, count: int) -> np.ndarray:
        """Next `count` raw draws as a uint64 array (sequential, exact)."""
        nxt = self.next_u64
        return np.array([nxt() for _ in range(count)], dtype=np.uint64)


def standard_normal(rng: Rng, rows: int, cols: int) -> Matrix:
    """(rows x cols) float32 matrix of i.i.d. N(0,1) draws via Box-Muller.

    Consumes two uniforms per pair of outputs, in a fixed order, so the
    sequence is fully determined by the generator state.
    """
    n = rows * cols
    pairs = (n + 1) // 2
    raw = rng.fill_u64(2 * pairs)
    scale = float(1 << 53)
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) / scale  # (0, 1]
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) / scale  # [0, 1)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * math.pi) * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n].astype(np.float32).reshape(rows, cols)


def as_matrix(values) -> Matrix:
    """Coerce nested lists / arrays to a 2-D float32 matrix."""
    m = np.asarray(values, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return np.ascontiguousarray(m)


def _require_2d(name: str, m: np.ndarray) -> None:
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product with a shape check."""
    _require_2d("a", a)
    _require_2d("b", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} x {b.shape})")
    return a @ b


def layer_norm(x: Matrix, eps: float = 1e-5) -> Matrix:
    """Row-wise normalization to mean 0 / variance 1 (population variance).

    No learned scale or shift; any affine conditioning is folded into the
    adjacent projections by the caller.
    """
    _require_2d("x", x)
    if eps < 0:
        raise ShapeError("layer_norm: eps must be non-negative")
    mean = x.mean(axis=1, keepdims=True, dtype=np.float64)
    centered = x.astype(np.float64) - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    return (centered / np.sqrt(var + eps)).astype(np.float32)


def softmax_rows(x: Matrix) -> Matrix:
    """Row-wise softmax with max-subtraction for numerical stability."""
    _require_2d("x", x)
    x64 = x.astype(np.float64)
    x64 -= x64.max(axis=1, keepdims=True)
    e = np.exp(x64)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def gelu(x: Matrix) -> Matrix:
    """Elementwise GELU, tanh approximation."""
    x64 = x.astype(np.float64)
    inner = math.sqrt(2.0 / math.pi) * (x64 + 0.044715 * (x64 * x64 * x64))
    return (0.5 * x64 * (1.0 + np.tanh(inner))).astype(np.float32)


@dataclass(frozen=True)
class Polynomial:
    """Coefficients ordered constant-term first; len == degree + 1."""

    degree: int
    coefficients: tuple[float, ...]

    def __post_init__(self):
        if self.degree < 0:
            raise FitError("polynomial degree must be >= 0")
        if len(self.coefficients) != self.degree + 1:
            raise FitError(
                f"expected {self.degree + 1} coefficients, got {len(self.coefficients)}"
            )


def polyfit(xs, ys, degree: int) -> Polynomial:
    """Least-squares polynomial fit via normal equations.

    Solves (V^T V) c = V^T y in float64 with Gaussian elimination and partial
    pivoting.  Callers are expected to pre-normalize xs to [0, 1] so the
    Vandermonde system stays well conditioned.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise FitError(f"polyfit: xs and ys lengths differ ({len(xs)} vs {len(ys)})")
    if len(xs) < degree + 1:
        raise FitError(f"polyfit: need at least {degree + 1} samples, got {len(xs)}")
    vander = np.vander(xs, degree + 1, increasing=True)
    gram = vander.T @ vander
    rhs = vander.T @ ys
    coeffs = _solve_gaussian(gram, rhs)
    return Polynomial(degree, tuple(float(c) for c in coeffs))


def _solve_gaussian(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b (square, float64) by Gaussian elimination, partial pivoting."""
    a = a.astype(np.float64).copy()
    b = b.astype(np.float64).copy()
    n = len(b)
    ref = max(float(np.abs(a).max()), 1.0)
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        pivot = a[pivot_row, col]
        if abs(pivot) <= 1e-13 * ref:
            raise FitError("singular normal-equation system (rank-deficient fit)")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= factors[:, None] * a[col, col:]
        b[col + 1 :] -= factors * b[col]
    x = np.empty(n, dtype=np.float64)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def poly_eval(p: Polynomial, x: float) -> float:
    """Horner evaluation."""
    acc = 0.0
    for c in reversed(p.coefficients):
        acc = acc * x + c
    return acc
