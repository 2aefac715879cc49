"""Statistical SRAM-PUF model.

Each simulated device has a fixed reference start-up pattern derived from its
identity seed. A readout is the reference with independent Bernoulli bit
flips. The flips double as an entropy source for seeding the DRBG.

Bit vectors are ``numpy.uint8`` arrays holding 0/1, most significant bit of
each byte first when packed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .symmetric import drbg_bytes, drbg_seed, sha256

DEFAULT_SIZE = 12288
DEFAULT_FLIP_PROBABILITY = 0.15


class BadSize(ValueError):
    pass


class InsufficientEntropy(RuntimeError):
    """Readouts carried no noise; supply external randomness instead."""


@dataclass(frozen=True)
class NoiseModel:
    flip_probability: float = DEFAULT_FLIP_PROBABILITY
    noise_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability < 0.5:
            raise ValueError(f"flip probability must lie in [0, 0.5), got {self.flip_probability}")

    def derive(self, index: int) -> "NoiseModel":
        """Independent noise model for the ``index``-th readout under this seed."""
        digest = sha256(b"noise" + self.noise_seed.to_bytes(8, "big") + index.to_bytes(8, "big"))
        return NoiseModel(self.flip_probability, int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True, eq=False)
class PufDevice:
    device_seed: int
    size: int
    reference: np.ndarray = field(repr=False)


def new_device(device_seed: int, size: int = DEFAULT_SIZE) -> PufDevice:
    if size < 1024 or size % 8:
        raise BadSize(f"PUF size must be a multiple of 8 and at least 1024, got {size}")
    if not 0 <= device_seed < 1 << 64:
        raise ValueError("device seed must fit in 64 unsigned bits")
    raw, _ = drbg_bytes(drbg_seed(device_seed.to_bytes(8, "big")), size // 8)
    reference = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    reference.setflags(write=False)
    return PufDevice(device_seed, size, reference)


def readout(dev: PufDevice, noise: NoiseModel) -> np.ndarray:
    """Noisy start-up pattern: reference XOR i.i.d. Bernoulli(p) errors."""
    if noise.flip_probability == 0:
        return dev.reference.copy()
    # noise is physical and device-specific; the same noise seed on two
    # devices must not produce the same error pattern
    rng = np.random.default_rng((dev.device_seed, noise.noise_seed))
    errors = (rng.random(dev.size) < noise.flip_probability).astype(np.uint8)
    return dev.reference ^ errors


def extract_entropy_seed(dev: PufDevice, noise: NoiseModel, readout_count: int = 8) -> bytes:
    """Hash pairwise XORs of fresh readouts into a 32-byte seed.

    The reference cancels in each XOR, leaving only readout noise.
    """
    if readout_count < 2 or readout_count % 2:
        raise ValueError(f"readout_count must be even and >= 2, got {readout_count}")
    blocks = []
    for i in range(0, readout_count, 2):
        diff = readout(dev, noise.derive(i)) ^ readout(dev, noise.derive(i + 1))
        blocks.append(np.packbits(diff).tobytes())
    if not any(np.any(np.frombuffer(b, dtype=np.uint8)) for b in blocks):
        raise InsufficientEntropy("all readout differences are zero")
    return sha256(b"".join(blocks))


def fractional_hamming(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.count_nonzero(a != b)) / len(a)
