"""Latency cost model for per-query scheme selection.

Both schemes pay the round trip; plaintext download pays transfer of the
whole disclosed range, while the encrypted path pays a fixed transfer
(selector ciphertexts up, one answer down) plus per-block server compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

PLAIN_DOWNLOAD = "plain"
VARPIR = "varpir"


@dataclass(frozen=True)
class CostInputs:
    """Environment and parameter constants the model needs."""

    bandwidth_bps: float
    rtt_s: float
    c_fhe_s: float  # per-plaintext homomorphic cost, server-measured
    pair_bytes: int
    query_ct_bytes: int
    answer_ct_bytes: int
    ring_degree: int


def plain_cost(range_len_items: int, inputs: CostInputs) -> float:
    """Seconds to download the disclosed range in plaintext."""
    bits = range_len_items * inputs.pair_bytes * 8
    return bits / inputs.bandwidth_bps + inputs.rtt_s


def varpir_cost(w_pt: int, inputs: CostInputs) -> float:
    """Seconds for the encrypted path over w_pt blocks."""
    ct_count = math.ceil(w_pt / inputs.ring_degree)
    bits = (inputs.query_ct_bytes * ct_count + inputs.answer_ct_bytes) * 8
    return bits / inputs.bandwidth_bps + inputs.rtt_s + w_pt * inputs.c_fhe_s


def select_scheme(
    range_len_items: int, w_pt: int, inputs: CostInputs
) -> tuple[str, float, float]:
    """Argmin of the two modelled latencies; ties go to plain download.

    Returns (scheme, plain_cost_s, varpir_cost_s).
    """
    c_plain = plain_cost(range_len_items, inputs)
    c_var = varpir_cost(w_pt, inputs)
    scheme = PLAIN_DOWNLOAD if c_plain <= c_var else VARPIR
    return scheme, c_plain, c_var
