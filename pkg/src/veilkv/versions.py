"""Multi-version lifecycle: in-place value updates and copy-on-write key
updates with an atomic version swap.

The active version is immutable in key set and layout while servable.
Value updates edit the raw store and re-encode exactly the blocks whose
coverage contains the touched position, under per-block locks.  Batch key
updates build a complete pending version off to the side, reusing the
encoded blocks that lie entirely below the first affected position, then
swap it in; readers keep the version they started with until it expires.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from . import varpir
from .pgm import DEFAULT_EPS_DATA, DEFAULT_EPS_MODEL, PgmIndex
from .hecore import HeParams
from .store import KEY_SENTINEL, KeyNotFoundError, KvStore


class UpdateConflictError(ValueError):
    """Batch update would insert an existing key or delete a missing one."""


@dataclass
class StoreVersion:
    """One complete servable version."""

    version_id: int
    store: KvStore
    pgm: PgmIndex
    enc: varpir.EncodedStore


class VersionedStore:
    """Active version plus retired versions kept for laggard sessions.

    Retired versions expire after ``retire_timeout`` seconds or once every
    registered session has acknowledged a newer version, whichever comes
    first (the retention policy for never-acknowledging clients is a local
    choice; see the project notes).
    """

    def __init__(
        self,
        store: KvStore,
        he: HeParams,
        eps_data: int = DEFAULT_EPS_DATA,
        eps_model: int = DEFAULT_EPS_MODEL,
        retire_timeout: float = 60.0,
    ):
        self.he = he
        self.eps_data = eps_data
        self.eps_model = eps_model
        self.retire_timeout = retire_timeout
        version_id = max(store.version_id, 1)
        store.version_id = version_id
        self.active = StoreVersion(
            version_id,
            store,
            PgmIndex.build(store.keys, eps_data, eps_model),
            varpir.encode_store(store, he, eps_data, version_id),
        )
        self._retired: dict[int, tuple[StoreVersion, float]] = {}
        self._session_acks: dict[int, int] = {}
        self._swap_lock = threading.Lock()
        self._batch_lock = threading.Lock()

    # -- read paths ------------------------------------------------------

    def get_version(self, version_id: int) -> StoreVersion | None:
        """The requested version if still servable, else None."""
        active = self.active
        if version_id == active.version_id:
            return active
        self._expire_retired()
        entry = self._retired.get(version_id)
        return entry[0] if entry else None

    def acknowledge(self, session_id: int, version_id: int):
        """Record that a session has switched to ``version_id``."""
        with self._swap_lock:
            self._session_acks[session_id] = version_id
            acked = min(self._session_acks.values(), default=version_id)
            for vid in [v for v in self._retired if v < acked]:
                del self._retired[vid]

    def _expire_retired(self):
        now = time.monotonic()
        stale = [v for v, (_, deadline) in self._retired.items() if deadline < now]
        for vid in stale:
            with self._swap_lock:
                self._retired.pop(vid, None)

    # -- value updates -----------------------------------------------------

    def update_value(self, key: int, new_value: bytes):
        """Real-time value edit: raw store plus every covering block.

        The index and version id are untouched; both encoded copies of the
        pair (misaligned layout) are rewritten under their block locks.

        Raises:
            KeyNotFoundError: key absent from the active version.
        """
        version = self.active
        pos = version.store.set_value(key, new_value)
        for block in version.enc.params.blocks_covering(pos):
            varpir.reencode_block(version.enc, version.store, block)

    # -- batch key updates ---------------------------------------------------

    def batch_update_keys(
        self, inserts: list[tuple[int, bytes]], deletes: list[int]
    ) -> int:
        """Copy-on-write merge; returns the new version id.

        Reads on the active version proceed untouched while the pending
        version is built; the swap is a single reference assignment.

        Raises:
            UpdateConflictError: insert collides with an existing key or a
                delete names a missing key.
        """
        with self._batch_lock:
            old = self.active
            store = old.store
            ins_keys = np.array([k for k, _ in inserts], dtype=np.uint64)
            if len(ins_keys) != len(set(int(k) for k in ins_keys)):
                raise UpdateConflictError("duplicate keys in insert batch")
            if len(ins_keys) and (np.max(ins_keys) >= KEY_SENTINEL):
                raise UpdateConflictError("insert key collides with the sentinel")
            present = np.searchsorted(store.keys, ins_keys)
            for i, k in enumerate(ins_keys):
                p = int(present[i])
                if p < store.n and int(store.keys[p]) == int(k):
                    raise UpdateConflictError(f"insert key {int(k)} already present")
            del_keys = np.array(sorted(set(deletes)), dtype=np.uint64)
            del_pos = np.searchsorted(store.keys, del_keys)
            for i, k in enumerate(del_keys):
                p = int(del_pos[i])
                if p >= store.n or int(store.keys[p]) != int(k):
                    raise UpdateConflictError(f"delete key {int(k)} not present")

            keep = np.ones(store.n, dtype=bool)
            keep[del_pos] = False
            if len(inserts):
                ins_vals = np.stack(
                    [np.frombuffer(v, dtype=np.uint8) for _, v in inserts]
                )
                order = np.argsort(ins_keys, kind="stable")
                ins_keys = ins_keys[order]
                ins_vals = ins_vals[order]
                new_keys = np.concatenate([store.keys[keep], ins_keys])
                new_vals = np.concatenate([store.values[keep], ins_vals])
                sort = np.argsort(new_keys, kind="stable")
                new_keys = new_keys[sort]
                new_vals = new_vals[sort]
            else:
                new_keys = store.keys[keep].copy()
                new_vals = store.values[keep].copy()

            new_vid = old.version_id + 1
            new_store = KvStore(new_keys, new_vals, new_vid)
            first_affected = _first_divergence(store, new_store)
            pgm = PgmIndex.build(new_keys, self.eps_data, self.eps_model)
            enc = _encode_with_prefix_reuse(
                new_store, old.enc, first_affected, self.he, self.eps_data, new_vid
            )
            pending = StoreVersion(new_vid, new_store, pgm, enc)
            with self._swap_lock:
                self._retired[old.version_id] = (
                    old,
                    time.monotonic() + self.retire_timeout,
                )
                self.active = pending
            return new_vid


def _first_divergence(old: KvStore, new: KvStore) -> int:
    """Lowest position at which the two sorted stores differ."""
    span = min(old.n, new.n)
    same = old.keys[:span] == new.keys[:span]
    if same.all():
        if old.n == new.n:
            return old.n  # identical key arrays
        return span
    return int(np.argmin(same))


def _encode_with_prefix_reuse(
    store: KvStore,
    old_enc: varpir.EncodedStore,
    first_affected: int,
    he: HeParams,
    eps_data: int,
    version_id: int,
) -> varpir.EncodedStore:
    """Encode a store, re-using old blocks wholly below the change point."""
    params = varpir.EncodingParams.derive(store.n, store.kv_bits, he, eps_data)
    reusable = 0
    for block in range(min(params.pt_count, old_enc.params.pt_count)):
        _, end = params.coverage(block)
        if end <= first_affected:
            reusable = block + 1
        else:
            break
    return varpir.encode_store(
        store, he, eps_data, version_id, reuse=old_enc, reuse_blocks=reusable
    )
