"""Simulated SHA-256 ASIC: a compiled nonce-search kernel.

The kernel stands in for the mining chip. It exposes a general-purpose
``sha256`` (used only to cross-check the kernel against hashlib) and
``search_nonce``, which scans nonces for the 88-byte proof header and
returns the first one whose double SHA-256 falls below the target.

The first 64 header bytes never change during a search, so their
compression state is computed once per search.
"""

import numpy as np
from numba import njit

_K = np.array([
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
], dtype=np.uint32)

_IV = np.array([
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
    0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
], dtype=np.uint32)

HEADER_LEN = 88
_M32 = 0xFFFFFFFF


@njit(cache=True, inline="always")
def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & 0xFFFFFFFF


@njit(cache=True)
def _compress(state, w):
    """One SHA-256 compression. ``w[0:16]`` holds the block; ``w`` is scratch of length 64."""
    for t in range(16, 64):
        x = w[t - 15]
        y = w[t - 2]
        s0 = _rotr(x, 7) ^ _rotr(x, 18) ^ (x >> 3)
        s1 = _rotr(y, 17) ^ _rotr(y, 19) ^ (y >> 10)
        w[t] = (w[t - 16] + s0 + w[t - 7] + s1) & 0xFFFFFFFF
    a = state[0]
    b = state[1]
    c = state[2]
    d = state[3]
    e = state[4]
    f = state[5]
    g = state[6]
    h = state[7]
    for t in range(64):
        S1 = _rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)
        ch = (e & f) ^ ((~e) & g)
        t1 = (h + S1 + ch + _K[t] + w[t]) & 0xFFFFFFFF
        S0 = _rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)
        maj = (a & b) ^ (a & c) ^ (b & c)
        t2 = (S0 + maj) & 0xFFFFFFFF
        h = g
        g = f
        f = e
        e = (d + t1) & 0xFFFFFFFF
        d = c
        c = b
        b = a
        a = (t1 + t2) & 0xFFFFFFFF
    state[0] = (state[0] + a) & 0xFFFFFFFF
    state[1] = (state[1] + b) & 0xFFFFFFFF
    state[2] = (state[2] + c) & 0xFFFFFFFF
    state[3] = (state[3] + d) & 0xFFFFFFFF
    state[4] = (state[4] + e) & 0xFFFFFFFF
    state[5] = (state[5] + f) & 0xFFFFFFFF
    state[6] = (state[6] + g) & 0xFFFFFFFF
    state[7] = (state[7] + h) & 0xFFFFFFFF


@njit(cache=True)
def _load_block(data, offset, w):
    for i in range(16):
        j = offset + 4 * i
        w[i] = ((np.int64(data[j]) << 24) | (np.int64(data[j + 1]) << 16)
                | (np.int64(data[j + 2]) << 8) | np.int64(data[j + 3]))


@njit(cache=True)
def _sha256_words(data):
    n = data.shape[0]
    padded_len = ((n + 9 + 63) // 64) * 64
    buf = np.zeros(padded_len, dtype=np.uint8)
    buf[:n] = data
    buf[n] = 0x80
    bitlen = np.int64(n) * 8
    for i in range(8):
        buf[padded_len - 1 - i] = (bitlen >> (8 * i)) & 0xFF
    state = np.empty(8, dtype=np.int64)
    for i in range(8):
        state[i] = _IV[i]
    w = np.zeros(64, dtype=np.int64)
    for off in range(0, padded_len, 64):
        _load_block(buf, off, w)
        _compress(state, w)
    return state


def sha256(data: bytes) -> bytes:
    """SHA-256 through the kernel. Slow to call per-message; meant for cross-checks."""
    state = _sha256_words(np.frombuffer(bytes(data), dtype=np.uint8))
    return b"".join(int(v).to_bytes(4, "big") for v in state)


LANES = 128


@njit(cache=True, inline="always")
def _rotr32(x, n):
    return np.uint32(np.uint32(x >> np.uint32(n)) | np.uint32(x << np.uint32(32 - n)))


@njit(cache=True, inline="always")
def _add32(a, b):
    return np.uint32(a + b)


@njit(cache=True, boundscheck=False)
def _compress_lanes(st, w, v):
    # Same round function as _compress, evaluated on LANES independent messages.
    # Registers live in v and rotate by slot instead of being shifted.
    for t in range(16, 64):
        wa = w[t - 15]
        wb = w[t - 2]
        wc = w[t - 16]
        wd = w[t - 7]
        wt = w[t]
        for l in range(LANES):
            x = wa[l]
            y = wb[l]
            s0 = _rotr32(x, 7) ^ _rotr32(x, 18) ^ np.uint32(x >> np.uint32(3))
            s1 = _rotr32(y, 17) ^ _rotr32(y, 19) ^ np.uint32(y >> np.uint32(10))
            wt[l] = _add32(_add32(wc[l], s0), _add32(wd[l], s1))
    for r in range(8):
        for l in range(LANES):
            v[r, l] = st[r, l]
    for t in range(64):
        k = _K[t]
        A = v[(0 - t) & 7]
        B = v[(1 - t) & 7]
        C = v[(2 - t) & 7]
        D = v[(3 - t) & 7]
        E = v[(4 - t) & 7]
        F = v[(5 - t) & 7]
        G = v[(6 - t) & 7]
        H = v[(7 - t) & 7]
        wt = w[t]
        for l in range(LANES):
            ee = E[l]
            aa = A[l]
            bb = B[l]
            cc = C[l]
            S1 = _rotr32(ee, 6) ^ _rotr32(ee, 11) ^ _rotr32(ee, 25)
            ch = (ee & F[l]) ^ (np.uint32(~ee) & G[l])
            t1 = _add32(_add32(_add32(H[l], S1), _add32(ch, k)), wt[l])
            S0 = _rotr32(aa, 2) ^ _rotr32(aa, 13) ^ _rotr32(aa, 22)
            maj = (aa & bb) ^ (aa & cc) ^ (bb & cc)
            D[l] = _add32(D[l], t1)
            H[l] = _add32(t1, _add32(S0, maj))
    # 64 rounds is a multiple of 8, so every register is back in its own slot
    for r in range(8):
        for l in range(LANES):
            st[r, l] = _add32(st[r, l], v[r, l])


@njit(cache=True)
def _search(prefix, target, always, start, count):
    # prefix: 80 header bytes (everything but the nonce); target: 8 big-endian words
    mid = np.empty(8, dtype=np.int64)
    for i in range(8):
        mid[i] = _IV[i]
    w1 = np.zeros(64, dtype=np.int64)
    _load_block(prefix, 0, w1)
    _compress(mid, w1)
    tail = np.empty(4, dtype=np.int64)
    for i in range(4):
        j = 64 + 4 * i
        tail[i] = ((np.int64(prefix[j]) << 24) | (np.int64(prefix[j + 1]) << 16)
                   | (np.int64(prefix[j + 2]) << 8) | np.int64(prefix[j + 3]))
    st = np.empty((8, LANES), dtype=np.uint32)
    w = np.zeros((64, LANES), dtype=np.uint32)
    v = np.empty((8, LANES), dtype=np.uint32)
    done = np.uint64(0)
    while done < count:
        base = start + done
        for i in range(8):
            for l in range(LANES):
                st[i, l] = np.uint32(mid[i])
        for l in range(LANES):
            nonce = base + np.uint64(l)
            for i in range(4):
                w[i, l] = np.uint32(tail[i])
            w[4, l] = np.uint32(nonce >> np.uint64(32))
            w[5, l] = np.uint32(nonce & np.uint64(0xFFFFFFFF))
            w[6, l] = np.uint32(0x80000000)
            for i in range(7, 15):
                w[i, l] = np.uint32(0)
            w[15, l] = np.uint32(HEADER_LEN * 8)
        _compress_lanes(st, w, v)
        for l in range(LANES):
            for i in range(8):
                w[i, l] = st[i, l]
            w[8, l] = np.uint32(0x80000000)
            for i in range(9, 15):
                w[i, l] = np.uint32(0)
            w[15, l] = np.uint32(256)
        for i in range(8):
            for l in range(LANES):
                st[i, l] = _IV[i]
        _compress_lanes(st, w, v)
        for l in range(LANES):
            if done + np.uint64(l) >= count:
                break
            hit = always
            if not hit:
                for i in range(8):
                    word = np.int64(st[i, l])
                    if word < target[i]:
                        hit = True
                        break
                    if word > target[i]:
                        break
            if hit:
                return True, done + np.uint64(l)
        done += np.uint64(LANES)
    return False, count


_CHUNK = 1 << 24


def search_nonce(header_prefix: bytes, target: int, start: int = 0, limit: int = 1 << 64):
    """Scan nonces ``start, start+1, ...`` below ``limit``.

    Returns the first nonce whose header double-hash is below ``target``,
    or ``None`` if the range is exhausted.
    """
    if len(header_prefix) != HEADER_LEN - 8:
        raise ValueError("header prefix must be 80 bytes")
    prefix = np.frombuffer(header_prefix, dtype=np.uint8)
    always = target >= 1 << 256
    t = 0 if always else target
    words = np.array([(t >> (224 - 32 * i)) & _M32 for i in range(8)], dtype=np.int64)
    nonce = start
    while nonce < limit:
        count = min(_CHUNK, limit - nonce)
        found, k = _search(prefix, words, always, np.uint64(nonce), np.uint64(count))
        if found:
            return nonce + int(k)
        nonce += count
    return None
