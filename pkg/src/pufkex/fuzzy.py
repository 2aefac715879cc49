"""Code-offset fuzzy extractor.

The error-correcting code is a concatenation of an inner repetition code and
an outer first-order Reed-Muller code RM(1, m), decoded by maximum likelihood
through a fast Hadamard transform. With the defaults (repetition 3, RM(1,7),
32 blocks) a 256-bit secret occupies 12288 PUF bits.

    helper = R xor Encode(S)
    S = Decode(R' xor helper)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .puf import NoiseModel, PufDevice, extract_entropy_seed
from .symmetric import drbg_bytes, drbg_seed

SECRET_BYTES = 32


class SizeMismatch(ValueError):
    pass


class DecodeAmbiguous(ValueError):
    """Two Reed-Muller hypotheses have equal correlation magnitude."""


class ReconstructFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class CodeParams:
    rm_order: int = 7
    repetition: int = 3

    def __post_init__(self):
        if self.repetition < 1 or self.repetition % 2 == 0:
            raise ValueError("repetition must be a positive odd count")
        if 256 % (self.rm_order + 1):
            raise ValueError("rm_order + 1 must divide 256")

    @property
    def message_bits(self) -> int:
        return self.rm_order + 1

    @property
    def blocks(self) -> int:
        return 256 // self.message_bits

    @property
    def codeword_bits(self) -> int:
        return 1 << self.rm_order

    @property
    def block_bits(self) -> int:
        return self.repetition * self.codeword_bits

    @property
    def response_bits(self) -> int:
        return self.blocks * self.block_bits


DEFAULT_PARAMS = CodeParams()


def _parity(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    shift = 1
    while shift < 64:
        x ^= x >> shift
        shift <<= 1
    return x & 1


def rm_encode(msg: int, m: int = 7) -> np.ndarray:
    """RM(1, m) codeword: bit j = m0 xor <(m1..m_m), binary(j)>.

    ``m0`` is the least significant bit of ``msg``; bit i of ``msg >> 1``
    multiplies bit i of the position index ``j``.
    """
    if not 0 <= msg < (1 << (m + 1)):
        raise ValueError(f"message out of range for RM(1,{m})")
    j = np.arange(1 << m, dtype=np.int64)
    return ((msg & 1) ^ _parity(j & (msg >> 1))).astype(np.uint8)


def fht(x: np.ndarray) -> np.ndarray:
    """Walsh-Hadamard transform along the last axis, natural (Sylvester) order."""
    out = np.array(x, dtype=np.int64)
    n = out.shape[-1]
    if n & (n - 1):
        raise ValueError("transform length must be a power of two")
    lead = out.shape[:-1]
    h = 1
    while h < n:
        view = out.reshape(*lead, n // (2 * h), 2, h)
        a = view[..., 0, :].copy()
        b = view[..., 1, :]
        view[..., 0, :] = a + b
        view[..., 1, :] = a - b
        h *= 2
    return out


def rm_decode_blocks(words: np.ndarray) -> np.ndarray:
    """Decode a (blocks, 2^m) array of hard bits; returns one message per row."""
    words = np.atleast_2d(words)
    corr = fht(1 - 2 * words.astype(np.int64))
    mag = np.abs(corr)
    top2 = np.partition(mag, -2, axis=-1)[:, -2:]
    tied = top2[:, 0] == top2[:, 1]
    if np.any(tied):
        raise DecodeAmbiguous(f"correlation tie in block(s) {np.flatnonzero(tied).tolist()}")
    idx = np.argmax(mag, axis=-1)
    sign = corr[np.arange(len(idx)), idx] < 0
    return (idx << 1) | sign


def rm_decode(word: np.ndarray) -> int:
    return int(rm_decode_blocks(np.asarray(word)[None, :])[0])


def _chunks(secret: bytes, params: CodeParams) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(secret, dtype=np.uint8)).reshape(params.blocks, params.message_bits)
    weights = 1 << np.arange(params.message_bits - 1, -1, -1)
    return bits.astype(np.int64) @ weights


def _unchunk(msgs: np.ndarray, params: CodeParams) -> bytes:
    shifts = np.arange(params.message_bits - 1, -1, -1)
    bits = ((msgs[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def encode(secret: bytes, params: CodeParams = DEFAULT_PARAMS) -> np.ndarray:
    if len(secret) != SECRET_BYTES:
        raise SizeMismatch(f"secret must be {SECRET_BYTES} bytes")
    codewords = [rm_encode(int(c), params.rm_order) for c in _chunks(secret, params)]
    return np.repeat(np.concatenate(codewords), params.repetition)


def enroll(response: np.ndarray, secret: bytes, params: CodeParams = DEFAULT_PARAMS) -> np.ndarray:
    """Helper data binding ``secret`` to the enrollment response."""
    if len(response) != params.response_bits:
        raise SizeMismatch(f"response has {len(response)} bits, code needs {params.response_bits}")
    return (response ^ encode(secret, params)).astype(np.uint8)


def reconstruct(response: np.ndarray, helper: np.ndarray, params: CodeParams = DEFAULT_PARAMS) -> bytes:
    if len(response) != params.response_bits or len(helper) != params.response_bits:
        raise SizeMismatch(
            f"response/helper lengths {len(response)}/{len(helper)}, code needs {params.response_bits}"
        )
    noisy = (response ^ helper).reshape(params.blocks, params.codeword_bits, params.repetition)
    votes = (noisy.sum(axis=-1) > params.repetition // 2).astype(np.uint8)
    try:
        msgs = rm_decode_blocks(votes)
    except DecodeAmbiguous as exc:
        raise ReconstructFailed(str(exc)) from exc
    return _unchunk(msgs, params)


def puf_enroll(
    dev: PufDevice,
    noise: NoiseModel,
    params: CodeParams = DEFAULT_PARAMS,
    secret: bytes | None = None,
) -> tuple[bytes, np.ndarray]:
    """Draw a secret from the PUF-seeded DRBG and bind it to the device.

    Enrollment binds against the reference pattern, standing in for the
    averaged start-up state measured in a controlled environment.
    """
    if secret is None:
        seed = extract_entropy_seed(dev, noise)
        secret, _ = drbg_bytes(drbg_seed(seed), SECRET_BYTES)
    return secret, enroll(dev.reference, secret, params)


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits).tobytes()


def unpack_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))
