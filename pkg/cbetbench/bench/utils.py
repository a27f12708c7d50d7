import hashlib
from collections.abc import Iterator
from itertools import islice
from pathlib import Path
from typing import Any

import numpy as np

# Independent random streams derived from one experiment seed
ENV_STREAM = 0
ACTION_STREAM = 1
RESET_STREAM = 2
INIT_STREAM = 3
EVAL_STREAM = 4

SEED_BOUND = 2**63


def rng_stream(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, stream, *extra])
    )


def draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(SEED_BOUND))


def stable_hash64(data: bytes, person: bytes = b"") -> int:
    digest = hashlib.blake2b(data, digest_size=8, person=person).digest()
    return int.from_bytes(digest, "little")


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def batched(iterable: Any, n: int) -> Iterator[Any]:
    it = iter(iterable)
    while True:
        if not (batch := list(islice(it, n))):
            return
        yield batch
