"""Counter-based random streams (Philox4x32-10).

Every consumer draws from a stream addressed by three 32-bit ids, typically
(pixel, iteration, stratum). Streams are independent of evaluation order and
chunking, which is what makes renders and training runs reproduce bit-exactly
for a given seed.

Each Philox block yields four 32-bit words; pairs of words are packed into one
float64 strictly inside (0, 1).
"""

import numpy as np

from flowtrace._backend import njit, use_numba

_M0 = np.uint32(0xD2511F53)
_M1 = np.uint32(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)

_U32 = np.uint64(0xFFFFFFFF)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


def _philox_blocks_numpy(ctr: np.ndarray, key: np.ndarray) -> np.ndarray:
    """10 Philox rounds over (N, 4) uint32 counters with (N, 2) uint32 keys."""
    c0 = ctr[:, 0].astype(np.uint64)
    c1 = ctr[:, 1].astype(np.uint32)
    c2 = ctr[:, 2].astype(np.uint64)
    c3 = ctr[:, 3].astype(np.uint32)
    k0 = key[:, 0].copy()
    k1 = key[:, 1].copy()
    m0 = np.uint64(int(_M0))
    m1 = np.uint64(int(_M1))
    for _ in range(10):
        p0 = m0 * c0
        p1 = m1 * c2
        lo0 = (p0 & _U32).astype(np.uint32)
        hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
        lo1 = (p1 & _U32).astype(np.uint32)
        hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
        n0 = hi1 ^ c1 ^ k0
        n2 = hi0 ^ c3 ^ k1
        c0 = n0.astype(np.uint64)
        c1 = lo1
        c2 = n2.astype(np.uint64)
        c3 = lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    out = np.empty((ctr.shape[0], 4), dtype=np.uint32)
    out[:, 0] = c0.astype(np.uint32)
    out[:, 1] = c1
    out[:, 2] = c2.astype(np.uint32)
    out[:, 3] = c3
    return out


@njit
def _philox_blocks_numba(ctr, key):  # pragma: no cover - numba twin
    n = ctr.shape[0]
    out = np.empty((n, 4), dtype=np.uint32)
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    w0 = np.uint32(0x9E3779B9)
    w1 = np.uint32(0xBB67AE85)
    mask = np.uint64(0xFFFFFFFF)
    for i in range(n):
        c0, c1, c2, c3 = ctr[i, 0], ctr[i, 1], ctr[i, 2], ctr[i, 3]
        k0, k1 = key[i, 0], key[i, 1]
        for _ in range(10):
            p0 = m0 * np.uint64(c0)
            p1 = m1 * np.uint64(c2)
            lo0 = np.uint32(p0 & mask)
            hi0 = np.uint32(p0 >> np.uint64(32))
            lo1 = np.uint32(p1 & mask)
            hi1 = np.uint32(p1 >> np.uint64(32))
            # numba promotes uint32 arithmetic to int64: truncate explicitly
            c0 = np.uint32(hi1 ^ c1 ^ k0)
            c1 = lo1
            c2 = np.uint32(hi0 ^ c3 ^ k1)
            c3 = lo0
            k0 = np.uint32(k0 + w0)
            k1 = np.uint32(k1 + w1)
        out[i, 0] = c0
        out[i, 1] = c1
        out[i, 2] = c2
        out[i, 3] = c3
    return out


def philox4x32(ctr: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Raw Philox4x32-10: (N, 4) uint32 counters, (N, 2) uint32 keys -> (N, 4)."""
    ctr = np.ascontiguousarray(ctr, dtype=np.uint32)
    key = np.ascontiguousarray(key, dtype=np.uint32)
    if use_numba():
        return _philox_blocks_numba(ctr, key)
    return _philox_blocks_numpy(ctr, key)


def _pack_doubles(words: np.ndarray) -> np.ndarray:
    """(N, 4) uint32 -> (N, 2) float64, each strictly in (0, 1)."""
    w = words.astype(np.uint64)
    hi = (w[:, 0] << np.uint64(32)) | w[:, 1]
    lo = (w[:, 2] << np.uint64(32)) | w[:, 3]
    out = np.empty((words.shape[0], 2), dtype=np.float64)
    out[:, 0] = ((hi >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53
    out[:, 1] = ((lo >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53
    return out


def _seed_key(seed: int, n: int) -> np.ndarray:
    key = np.empty((n, 2), dtype=np.uint32)
    key[:, 0] = np.uint32(seed & 0xFFFFFFFF)
    key[:, 1] = np.uint32((seed >> 32) & 0xFFFFFFFF)
    return key


def stream_uniforms_2d(seed: int, ids0, ids1, ids2, k: int) -> np.ndarray:
    """Per-stream uniforms: one row of `k` float64 values per stream.

    ids0/ids1/ids2 address the stream (e.g. pixel, iteration, stratum); they
    broadcast against each other to a common length N. Returns (N, k).
    """
    ids0, ids1, ids2 = np.broadcast_arrays(
        np.atleast_1d(ids0), np.atleast_1d(ids1), np.atleast_1d(ids2)
    )
    n = ids0.shape[0]
    nblocks = (k + 1) // 2
    ctr = np.empty((n * nblocks, 4), dtype=np.uint32)
    ctr[:, 0] = np.tile(np.arange(nblocks, dtype=np.uint32), n)
    ctr[:, 1] = np.repeat(ids0.astype(np.uint32), nblocks)
    ctr[:, 2] = np.repeat(ids1.astype(np.uint32), nblocks)
    ctr[:, 3] = np.repeat(ids2.astype(np.uint32), nblocks)
    words = philox4x32(ctr, _seed_key(seed, n * nblocks))
    return _pack_doubles(words).reshape(n, nblocks * 2)[:, :k]


def stream_uniforms(seed: int, ids: tuple, n: int) -> np.ndarray:
    """`n` float64 uniforms from the single stream addressed by 3 ids."""
    a, b, c = ids
    return stream_uniforms_2d(seed, a, b, c, n)[0]
