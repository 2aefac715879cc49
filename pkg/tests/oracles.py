"""Independent reference computations used to check the package.

Nothing here imports from pufkex.
"""

from __future__ import annotations

import numpy as np

P = 2**255 - 19
MONT_A = 486662


def sqrt_mod_p(a: int) -> int | None:
    """Square root modulo 2^255-19 (p = 5 mod 8), or None for non-residues."""
    a %= P
    if a == 0:
        return 0
    if pow(a, (P - 1) // 2, P) != 1:
        return None
    r = pow(a, (P + 3) // 8, P)
    if r * r % P != a:
        r = r * pow(2, (P - 1) // 4, P) % P
    return r


def mont_lift(u: int):
    """Affine point (u, v) on v^2 = u^3 + A u^2 + u, or None if u is on the twist."""
    v = sqrt_mod_p(u**3 + MONT_A * u * u + u)
    return None if v is None else (u % P, v)


def mont_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    (u1, v1), (u2, v2) = p1, p2
    if u1 == u2:
        if (v1 + v2) % P == 0:
            return None
        lam = (3 * u1 * u1 + 2 * MONT_A * u1 + 1) * pow(2 * v1, P - 2, P) % P
    else:
        lam = (v2 - v1) * pow(u2 - u1, P - 2, P) % P
    u3 = (lam * lam - MONT_A - u1 - u2) % P
    v3 = (lam * (u1 - u3) - v1) % P
    return (u3, v3)


def mont_scalar_u(k: int, u: int) -> int | None:
    """u-coordinate of k * (u, v) by affine double-and-add; 0 for the point at infinity."""
    pt = mont_lift(u)
    if pt is None:
        return None
    acc = None
    addend = pt
    while k:
        if k & 1:
            acc = mont_add(acc, addend)
        addend = mont_add(addend, addend)
        k >>= 1
    return 0 if acc is None else acc[0]


def clamp(k: bytes) -> int:
    n = int.from_bytes(k, "little")
    n &= ~7
    n &= (1 << 255) - 1
    return n | (1 << 254)


def rm_codebook(m: int = 7) -> list[list[int]]:
    """All 2^(m+1) RM(1, m) codewords, built from the generator rows."""
    n = 1 << m
    book = []
    for msg in range(1 << (m + 1)):
        word = []
        for j in range(n):
            bit = msg & 1
            for i in range(m):
                bit ^= ((msg >> (i + 1)) & 1) & ((j >> i) & 1)
            word.append(bit)
        book.append(word)
    return book


def brute_force_decode(word: list[int], book: list[list[int]]) -> int:
    """Nearest codeword by exhaustive Hamming distance; ties resolved to the lowest message."""
    best, best_d = -1, None
    for msg, cw in enumerate(book):
        d = sum(a != b for a, b in zip(word, cw))
        if best_d is None or d < best_d:
            best, best_d = msg, d
    return best


def brute_force_decode_batch(words: np.ndarray, book: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive nearest-codeword search for many words at once.

    Returns (argmin message, whether that minimum distance is unique).
    """
    w = words.astype(np.int32)
    b = book.astype(np.int32)
    dist = w @ (1 - b).T + (1 - w) @ b.T
    best = dist.argmin(axis=1)
    dmin = dist.min(axis=1)
    unique = (dist == dmin[:, None]).sum(axis=1) == 1
    return best, unique
