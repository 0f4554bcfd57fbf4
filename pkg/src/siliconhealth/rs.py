"""Shortened systematic RS(255,223) -> (128,96) over GF(2^8), polynomial 0x11D.

Codeword byte ``j`` is the coefficient of ``x^(127-j)``: data first, 32
parity bytes last.  The generator has roots ``alpha^0 .. alpha^31`` with
``alpha = 2``.  Decoding is Berlekamp-Massey, Chien search and Forney,
with a final syndrome check so any accepted output is a true codeword.
"""

import numpy as np
from numba import njit, prange

from .errors import SiliconHealthError

PRIM = 0x11D
N = 128
K = 96
NSYM = N - K
T = NSYM // 2


class RsError(SiliconHealthError):
    pass


class DecodeFailure(RsError):
    pass


def _tables():
    exp = np.zeros(512, dtype=np.int64)
    log = np.zeros(256, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIM
    exp[255:510] = exp[:255]
    return exp, log


EXP, LOG = _tables()


def _generator():
    g = np.array([1], dtype=np.int64)
    for i in range(NSYM):
        root = EXP[i]
        out = np.zeros(len(g) + 1, dtype=np.int64)
        for j, c in enumerate(g):
            out[j] ^= c
            if c:
                out[j + 1] ^= EXP[LOG[c] + LOG[root]]
        g = out
    return g  # highest degree first, g[0] == 1


GEN = _generator()


def _mul_table():
    a = np.arange(256)
    table = EXP[(LOG[a][:, None] + LOG[a][None, :])]
    table[0, :] = 0
    table[:, 0] = 0
    return table.astype(np.uint8)


MUL = _mul_table()


@njit(cache=True, inline="always")
def _mul(a, b, mul):
    return np.int64(mul[a, b])


@njit(cache=True)
def _encode_one(data, out, gen, mul):
    rem = np.zeros(NSYM, dtype=np.int64)
    for i in range(K):
        out[i] = data[i]
        fb = data[i] ^ rem[0]
        for j in range(NSYM - 1):
            rem[j] = rem[j + 1] ^ _mul(fb, gen[j + 1], mul)
        rem[NSYM - 1] = _mul(fb, gen[NSYM], mul)
    for j in range(NSYM):
        out[K + j] = rem[j]


@njit(cache=True, parallel=True)
def _encode_batch(data, gen, mul):
    out = np.zeros((data.shape[0], N), dtype=np.uint8)
    for b in prange(data.shape[0]):
        _encode_one(data[b], out[b], gen, mul)
    return out


@njit(cache=True)
def _syndromes(block, exp, mul, s):
    nonzero = False
    for i in range(NSYM):
        row = mul[exp[i]]
        acc = 0
        # Horner at alpha^i, highest coefficient first
        for j in range(N):
            acc = np.int64(row[acc]) ^ np.int64(block[j])
        s[i] = acc
        if acc:
            nonzero = True
    return nonzero


@njit(cache=True)
def _decode_one(block, exp, log, mul):
    """Correct ``block`` in place; return the number of corrected symbols or -1."""
    s = np.zeros(NSYM, dtype=np.uint8)
    if not _syndromes(block, exp, mul, s):
        return 0
    # Berlekamp-Massey for the error locator, lowest degree first
    lam = np.zeros(NSYM + 1, dtype=np.int64)
    prev = np.zeros(NSYM + 1, dtype=np.int64)
    tmp = np.zeros(NSYM + 1, dtype=np.int64)
    lam[0] = 1
    prev[0] = 1
    L = 0
    m = 1
    b = 1
    for n in range(NSYM):
        d = s[n]
        for i in range(1, L + 1):
            d ^= _mul(lam[i], s[n - i], mul)
        if d == 0:
            m += 1
            continue
        coef = _mul(d, exp[255 - log[b]], mul)
        for i in range(NSYM + 1):
            tmp[i] = lam[i]
        for i in range(NSYM + 1 - m):
            lam[i + m] ^= _mul(coef, prev[i], mul)
        if 2 * L <= n:
            L = n + 1 - L
            for i in range(NSYM + 1):
                prev[i] = tmp[i]
            b = d
            m = 1
        else:
            m += 1
    if L > T:
        return -1
    # Chien search restricted to the 128 transmitted positions
    positions = np.zeros(L, dtype=np.int64)
    found = 0
    for j in range(N):
        p = N - 1 - j
        xinv = exp[(255 - p) % 255]
        acc = 0
        xp = 1
        for i in range(L + 1):
            acc ^= _mul(lam[i], xp, mul)
            xp = _mul(xp, xinv, mul)
        if acc == 0:
            if found == L:
                return -1
            positions[found] = j
            found += 1
    if found != L:
        return -1
    # Forney (first consecutive root alpha^0): e = X * Omega(X^-1) / Lambda'(X^-1)
    omega = np.zeros(NSYM, dtype=np.int64)
    for i in range(NSYM):
        acc = 0
        for k in range(min(i, L) + 1):
            acc ^= _mul(lam[k], s[i - k], mul)
        omega[i] = acc
    for f in range(L):
        j = positions[f]
        p = N - 1 - j
        x = exp[p]
        xinv = exp[(255 - p) % 255]
        num = 0
        xp = 1
        for i in range(NSYM):
            num ^= _mul(omega[i], xp, mul)
            xp = _mul(xp, xinv, mul)
        den = 0
        xp = 1
        for i in range(1, L + 1, 2):
            den ^= _mul(lam[i], xp, mul)
            xp = _mul(xp, _mul(xinv, xinv, mul), mul)
        if den == 0:
            return -1
        e = _mul(_mul(x, num, mul), exp[255 - log[den]], mul)
        block[j] ^= e
    if _syndromes(block, exp, mul, s):
        return -1
    return L


@njit(cache=True, parallel=True)
def _decode_batch(blocks, exp, log, mul):
    out = blocks.copy()
    counts = np.zeros(blocks.shape[0], dtype=np.int64)
    for b in prange(blocks.shape[0]):
        counts[b] = _decode_one(out[b], exp, log, mul)
    return out, counts


def _as_matrix(data, width):
    arr = np.asarray(data, dtype=np.uint8)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise RsError(f"wrong-length: expected rows of {width} bytes, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def encode_batch(data) -> np.ndarray:
    """Encode many 96-byte rows at once; returns uint8[n, 128]."""
    return _encode_batch(_as_matrix(data, K), GEN, MUL)


def decode_batch(blocks):
    """Decode many 128-byte rows.  Returns (corrected rows, counts) with -1 for failures."""
    return _decode_batch(_as_matrix(blocks, N), EXP, LOG, MUL)


def rs_encode(data: bytes) -> bytes:
    if len(data) != K:
        raise RsError(f"wrong-length: data must be {K} bytes, got {len(data)}")
    return encode_batch(np.frombuffer(data, dtype=np.uint8))[0].tobytes()


def rs_decode(block: bytes):
    """Return (96 data bytes, corrected symbol count); raise DecodeFailure if uncorrectable."""
    if len(block) != N:
        raise RsError(f"wrong-length: block must be {N} bytes, got {len(block)}")
    out, counts = decode_batch(np.frombuffer(block, dtype=np.uint8))
    if counts[0] < 0:
        raise DecodeFailure("uncorrectable block")
    return out[0, :K].tobytes(), int(counts[0])
