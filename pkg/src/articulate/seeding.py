"""Deterministic seed derivation.

Every random stream is keyed by ``(master_seed, purpose, scene_id)`` so that
partial re-runs and parallel execution reproduce the same numbers.
"""

import hashlib


def derive_seed(master_seed: int, purpose: str, scene_id: int | str = 0) -> int:
    key = f"{int(master_seed)}:{purpose}:{scene_id}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
