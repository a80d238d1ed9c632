"""Minimal ring-LWE homomorphic layer for variable-range retrieval."""

from .cipher import (
    Ciphertext,
    GaloisKeySet,
    HeError,
    SecretKey,
    add_ct,
    apply_automorphism,
    decrypt,
    encrypt,
    expansion_scale,
    gen_galois_keys,
    keygen,
    mul_plain,
    noise_budget,
    oblivious_expand,
)
from .params import GOLDILOCKS_Q, HeParams, derive_plain_modulus, is_prime

__all__ = [
    "Ciphertext",
    "GaloisKeySet",
    "HeError",
    "HeParams",
    "SecretKey",
    "GOLDILOCKS_Q",
    "add_ct",
    "apply_automorphism",
    "decrypt",
    "derive_plain_modulus",
    "encrypt",
    "expansion_scale",
    "gen_galois_keys",
    "is_prime",
    "keygen",
    "mul_plain",
    "noise_budget",
    "oblivious_expand",
]
