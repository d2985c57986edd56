"""Deterministic random substreams.

Every stochastic draw in the lab is keyed by a tuple of non-negative integers
``(seed, domain, ...)``. Keys are folded into a 63-bit seed with
``numpy.random.SeedSequence`` and used to seed a fresh ``torch.Generator``, so a
draw depends only on its key and never on how many draws happened before it.
"""

import hashlib
from typing import Optional, Sequence

import numpy as np
import torch

# Key domains
EPS_DOMAIN = 1
FORWARD_DOMAIN = 2
REVERSE_DOMAIN = 3
EOT_DOMAIN = 4
SUBSET_DOMAIN = 5
PLAN_DOMAIN = 6
SPLIT_DOMAIN = 7

_SEED_MASK = (1 << 63) - 1


def derive_seed(*keys: int) -> int:
    """Fold integer keys into a single 63-bit seed."""
    entropy = [int(k) & ((1 << 64) - 1) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0]) & _SEED_MASK


def make_generator(*keys: int) -> torch.Generator:
    generator = torch.Generator(device="cpu")
    generator.manual_seed(derive_seed(*keys))
    return generator


def content_ids(x: torch.Tensor) -> list[int]:
    """Per-row 64-bit identifiers from the row contents (BLAKE2b of float64 bytes)."""
    rows = x.detach().to("cpu", torch.float64).reshape(x.shape[0], -1).contiguous().numpy()
    return [int.from_bytes(hashlib.blake2b(row.tobytes(), digest_size=8).digest(), "little") for row in rows]


class NoiseStreams:
    """Per-row Gaussian noise keyed by ``(seed, sample_id, *keys)``."""

    def __init__(self, seed: int, sample_ids: Sequence[int]):
        self.seed = int(seed)
        self.sample_ids = [int(i) for i in sample_ids]

    def __len__(self) -> int:
        return len(self.sample_ids)

    @classmethod
    def positional(cls, seed: int, n: int) -> "NoiseStreams":
        return cls(seed, range(n))

    def reseeded(self, seed: int) -> "NoiseStreams":
        return NoiseStreams(seed, self.sample_ids)

    def normal(
        self,
        rows: Sequence[int],
        shape: Sequence[int],
        *keys: int,
        dtype: torch.dtype = torch.float32,
        device: Optional[torch.device] = None,
    ) -> torch.Tensor:
        """Stacked standard normal draws, one per requested row position."""
        draws = [
            torch.randn(tuple(shape), generator=make_generator(self.seed, self.sample_ids[r], *keys), dtype=dtype)
            for r in rows
        ]
        if not draws:
            return torch.empty((0, *shape), dtype=dtype, device=device)
        out = torch.stack(draws)
        return out.to(device) if device is not None else out
