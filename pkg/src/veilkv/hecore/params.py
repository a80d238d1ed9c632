"""Ring parameters and modulus derivation for the homomorphic core.

The ciphertext modulus is pinned to q = 2**64 - 2**32 + 1: it is prime,
satisfies q = 1 (mod 2N) for every power-of-two N up to 2**31 (so the
negacyclic number-theoretic transform exists), and its special shape gives
a branch-light 128-to-64 bit reduction, which the hot server path depends
on.  The plain modulus is the smallest prime above the limb-width target;
coefficients of encoded data stay strictly below it.

Parameters mirror the shape of a standard BFV configuration but this
module makes no independently vetted claim about a concrete security
level; the properties under test are protocol correctness and noise
behaviour.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

GOLDILOCKS_Q = (1 << 64) - (1 << 32) + 1
GOLDILOCKS_GENERATOR = 7

DEFAULT_RING_DEGREE = 4096
DEFAULT_PLAIN_BITS = 8
DEFAULT_NOISE_STDDEV = 3.2
DEFAULT_DECOMP_LOG = 16

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for sp in _MR_BASES:
        if n % sp == 0:
            return n == sp
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def derive_plain_modulus(target_bits: int) -> int:
    """Smallest odd prime >= 2**target_bits."""
    cand = (1 << target_bits) + 1
    while not is_prime(cand):
        cand += 2
    return cand


def primitive_root_2n(two_n: int, q: int = GOLDILOCKS_Q) -> int:
    """Primitive 2N-th root of unity mod q (for the negacyclic NTT)."""
    if (q - 1) % two_n != 0:
        raise ValueError(f"q-1 not divisible by {two_n}")
    psi = pow(GOLDILOCKS_GENERATOR, (q - 1) // two_n, q)
    if pow(psi, two_n, q) != 1 or pow(psi, two_n // 2, q) == 1:
        raise ValueError("generator does not yield a primitive 2N-th root")
    return psi


@dataclass(frozen=True)
class HeParams:
    """Ring-LWE layer parameters.

    Attributes:
        ring_degree: polynomial degree N (power of two).
        plain_modulus: odd prime p bounding data coefficients.
        cipher_modulus: prime q with q = 1 (mod 2N).
        noise_stddev: fresh-encryption Gaussian width.
        decomp_log: digit width (bits) of the key-switch decomposition.
    """

    ring_degree: int = DEFAULT_RING_DEGREE
    plain_modulus: int = field(default_factory=lambda: derive_plain_modulus(DEFAULT_PLAIN_BITS))
    cipher_modulus: int = GOLDILOCKS_Q
    noise_stddev: float = DEFAULT_NOISE_STDDEV
    decomp_log: int = DEFAULT_DECOMP_LOG

    def __post_init__(self):
        n = self.ring_degree
        if n < 2 or n & (n - 1):
            raise ValueError("ring_degree must be a power of two")
        if not is_prime(self.plain_modulus) or self.plain_modulus % 2 == 0:
            raise ValueError("plain_modulus must be an odd prime")
        if not is_prime(self.cipher_modulus):
            raise ValueError("cipher_modulus must be prime")
        if (self.cipher_modulus - 1) % (2 * n) != 0:
            raise ValueError("cipher_modulus must be 1 mod 2N")
        if not self.plain_modulus < self.cipher_modulus:
            raise ValueError("plain_modulus must be below cipher_modulus")
        if not 1 <= self.decomp_log <= 32:
            raise ValueError("decomp_log out of range")

    @property
    def n(self) -> int:
        return self.ring_degree

    @property
    def delta(self) -> int:
        """Plaintext scaling factor floor(q / p)."""
        return self.cipher_modulus // self.plain_modulus

    @property
    def limb_bits(self) -> int:
        """Payload bits per coefficient: floor(log2 p)."""
        return self.plain_modulus.bit_length() - 1

    @property
    def num_digits(self) -> int:
        """Key-switch digit count ceil(64 / decomp_log)."""
        return -(-self.cipher_modulus.bit_length() // self.decomp_log)

    @property
    def galois_elements(self) -> tuple[int, ...]:
        """Automorphism elements N/2**j + 1 for j = 0..log2(N)-1."""
        n = self.ring_degree
        return tuple(n // (1 << j) + 1 for j in range(n.bit_length() - 1))

    def params_hash(self) -> bytes:
        """8-byte digest identifying the parameter set on the wire."""
        blob = (
            f"{self.ring_degree},{self.plain_modulus},{self.cipher_modulus},"
            f"{self.noise_stddev},{self.decomp_log}"
        ).encode()
        return hashlib.blake2b(blob, digest_size=8).digest()

    def ciphertext_bytes(self) -> int:
        """Serialized ciphertext size: hash + two N-coefficient polys."""
        return 8 + 2 * 8 * self.ring_degree
