"""Dense float64 tensors and a portable deterministic PRNG.

Every numeric value in this package lives in a plain C-contiguous numpy
float64 array.  The helpers here add the strict shape checking the layers
rely on (no silent broadcasting beyond the documented bias case), and a
hand-rolled PCG32 generator so that identical seeds reproduce identical
runs bit for bit, independent of numpy's own RNG.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

_PCG_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_MASK32 = 0xFFFFFFFF
_INV_2_32 = 2.0 ** -32


class Pcg32:
    """PCG32 (XSH-RR output function, 64-bit LCG state).

    ``seq`` selects the output stream.  One master seed plus fixed stream
    ids is how the trainer derives its init / split / shuffle / dropout
    generators, keeping the whole run a pure function of the seed.
    """

    __slots__ = ("state", "inc")

    def __init__(self, seed: int, seq: int = 0):
        self.inc = ((seq << 1) | 1) & _MASK64
        self.state = 0
        self.next_u32()
        self.state = (self.state + seed) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _PCG_MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def bounded(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        threshold = (1 << 32) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        if not lo < hi:
            raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
        return min(lo + (hi - lo) * (self.next_u32() * _INV_2_32), np.nextafter(hi, lo))

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Tensor of i.i.d. uniforms in [lo, hi); advances the state n times."""
        if not lo < hi:
            raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
        if isinstance(shape, int):
            shape = (shape,)
        n = 1
        for d in shape:
            n *= int(d)
        out = np.empty(n, dtype=np.float64)
        state, inc = self.state, self.inc
        for i in range(n):
            old = state
            state = (old * _PCG_MULT + inc) & _MASK64
            x = (((old >> 18) ^ old) >> 27) & _MASK32
            rot = old >> 59
            out[i] = ((x >> rot) | (x << ((-rot) & 31))) & _MASK32
        self.state = state
        out *= _INV_2_32
        if lo != 0.0 or hi != 1.0:
            out *= hi - lo
            out += lo
            # guard against hitting hi through rounding of lo + (hi-lo)*u
            np.minimum(out, np.nextafter(hi, lo), out=out)
        return out.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.bounded(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


def tensor(data) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two rank-2 tensors; inner dimensions must agree."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul expects rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def concat(tensors, axis: int) -> np.ndarray:
    """Concatenate along ``axis``; all other dimensions must agree."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    first = tensors[0]
    if not 0 <= axis < first.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {first.shape}")
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[d] != first.shape[d] for d in range(first.ndim) if d != axis
        ):
            raise DimensionError(
                f"concat shape mismatch on axis {axis}: "
                f"{first.shape} vs {t.shape}"
            )
    return np.concatenate(tensors, axis=axis)


def ewise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise add/sub/mul.

    Shapes must be identical; the single permitted broadcast is a bias over
    the leading batch axis (b.shape == a.shape[1:]).
    """
    if a.shape != b.shape and b.shape != a.shape[1:]:
        raise DimensionError(f"ewise shape mismatch: {a.shape} vs {b.shape}")
    return _EWISE_OPS[op](a, b)


def ewise_scalar(a: np.ndarray, s: float, op: str) -> np.ndarray:
    return _EWISE_OPS[op](a, float(s))


_EWISE_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def rng_uniform(rng: Pcg32, shape, lo: float, hi: float) -> np.ndarray:
    """Uniform tensor in [lo, hi); raises ValueError when lo >= hi."""
    return rng.uniform_array(shape, lo, hi)
