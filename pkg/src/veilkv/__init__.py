"""veilkv: private lookups on a public sorted key-value store.

A server hosts plaintext fixed-width key-value pairs; clients convert keys
to predicted storage positions with a compact learned index, widen the
prediction into a noise-expanded range satisfying distance-based
indistinguishability, and retrieve either by plaintext range download or
by a variable-range encrypted retrieval whose computation touches only the
disclosed range.  A cost model picks the cheaper scheme per query.
"""

from .dldp import DEFAULT_EPS_DP, ObfuscatedRange, PrivacyParams
from .hecore import HeParams
from .pgm import DEFAULT_EPS_DATA, DEFAULT_EPS_MODEL, PgmIndex, PredictedRange
from .protocol import ClientSession, Server
from .rng import Rng
from .store import KvStore, generate_dataset, load_sosd
from .versions import VersionedStore

__version__ = "0.1.0"

__all__ = [
    "ClientSession",
    "DEFAULT_EPS_DATA",
    "DEFAULT_EPS_DP",
    "DEFAULT_EPS_MODEL",
    "HeParams",
    "KvStore",
    "ObfuscatedRange",
    "PgmIndex",
    "PredictedRange",
    "PrivacyParams",
    "Rng",
    "Server",
    "VersionedStore",
    "generate_dataset",
    "load_sosd",
    "__version__",
]
