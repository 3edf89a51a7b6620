"""Finite-field matrix arithmetic over GF(2) and GF(256).

Matrices are numpy uint8 arrays. GF(256) uses the reduction polynomial
x^8+x^4+x^3+x+1 (0x11B); multiplication goes through 256x256 lookup
tables built from exp/log tables over generator 3. Everything here is
pure given an explicit numpy Generator, so callers own all RNG state.
"""

from __future__ import annotations

import numpy as np

POLY_GF256 = 0x11B
SUPPORTED_FIELDS = (2, 256)


def _build_tables():
    exp = np.zeros(512, dtype=np.int16)
    log = np.zeros(256, dtype=np.int16)
    # generator 3: x itself is not primitive for 0x11B
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x ^= x << 1
        if x & 0x100:
            x ^= POLY_GF256
    exp[255:510] = exp[:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    nz = np.arange(1, 256)
    mul[1:, 1:] = exp[(log[nz][:, None] + log[nz][None, :]) % 255]
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[nz]) % 255]
    return mul, inv


_MUL256, _INV256 = _build_tables()


def _check_field(q):
    if q not in SUPPORTED_FIELDS:
        raise ValueError(f"unsupported field size {q}; supported: {SUPPORTED_FIELDS}")


def gf_mul(a, b, q=256):
    """Product of two field elements (ints or uint8 arrays)."""
    _check_field(q)
    if q == 2:
        return a & b
    return _MUL256[a, b]


def gf_add(a, b, q=256):
    """Sum of two field elements; XOR in characteristic 2."""
    _check_field(q)
    return a ^ b

def gf_inv(a, q=256):
    """Multiplicative inverse of a nonzero element."""
    _check_field(q)
    if np.any(np.asarray(a) == 0):
        raise ZeroDivisionError("zero has no inverse")
    return 1 if q == 2 else _INV256[a]


def random_matrix(rows, cols, rng, q=256):
    """Uniform i.i.d. matrix over GF(q); deterministic given the generator."""
    _check_field(q)
    return rng.integers(0, q, size=(rows, cols), dtype=np.uint8)


def gf_matmul(A, B, q=256):
    """Matrix product over GF(q)."""
    _check_field(q)
    A = np.asarray(A, dtype=np.uint8)
    B = np.asarray(B, dtype=np.uint8)
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch {A.shape} @ {B.shape}")
    if A.shape[0] == 0 or B.shape[1] == 0 or A.shape[1] == 0:
        return np.zeros((A.shape[0], B.shape[1]), dtype=np.uint8)
    if q == 2:
        return (A.astype(np.uint16) @ B.astype(np.uint16) & 1).astype(np.uint8)
    prod = _MUL256[A[:, :, None], B[None, :, :]]
    return np.bitwise_xor.reduce(prod, axis=1)


def row_reduce(A, q=256):
    """Row-echelon reduction; returns (basis rows, rank).

    The returned rows span the row space of A and are linearly
    independent (not necessarily the original rows).
    """
    _check_field(q)
    A = np.array(A, dtype=np.uint8)
    if A.size == 0:
        return A.reshape(0, A.shape[1] if A.ndim == 2 else 0), 0
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        piv = None
        for i in range(r, rows):
            if A[i, c]:
                piv = i
                break
        if piv is None:
            continue
        if piv != r:
            A[[r, piv]] = A[[piv, r]]
        if q == 256 and A[r, c] != 1:
            A[r] = _MUL256[_INV256[A[r, c]], A[r]]
        below = A[r + 1:, c] != 0
        if np.any(below):
            if q == 2:
                A[r + 1:][below] ^= A[r]
            else:
                A[r + 1:][below] ^= _MUL256[A[r + 1:, c][below][:, None], A[r][None, :]]
        r += 1
        if r == rows:
            break
    return A[:r], r


def matrix_rank(A, q=256):
    """Rank via Gaussian elimination; empty matrices have rank 0."""
    return row_reduce(A, q=q)[1]
