"""Seeded permutation primitives.

Restricted shuffles permute the response within each confounder level
(levels processed in sorted order, Fisher-Yates inside each level via
``Generator.permutation``). With a single level the generator is consumed
exactly as by ``standard_shuffle``, so both schemes produce identical draws.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ContractError, EnumerationCapError


@dataclass(frozen=True)
class RngStream:
    """Independent random stream keyed by (master_seed, stream_index)."""
    master_seed: int
    stream_index: int | tuple[int, ...] = 0

    @property
    def key(self) -> tuple[int, ...]:
        index = self.stream_index if isinstance(self.stream_index, tuple) else (self.stream_index,)
        return (int(self.master_seed), *(int(i) for i in index))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.key))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, self.key[1:] + (int(index),))


def derive_seed(seed: int, *tags: int) -> int:
    """A master seed for a separate family of streams within one run."""
    return int(np.random.SeedSequence((int(seed), *tags)).generate_state(1, dtype=np.uint64)[0])


def _as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


@dataclass(frozen=True)
class RestrictedPermutation:
    """Index permutation mapping every stratum's positions onto themselves."""
    perm: np.ndarray
    strata: np.ndarray

    def __post_init__(self):
        for level in np.unique(self.strata):
            members = np.flatnonzero(self.strata == level)
            if not np.array_equal(np.sort(self.perm[members]), members):
                raise ContractError(f"Permutation leaves stratum {level!r}")

    def apply(self, values: Sequence) -> np.ndarray:
        return np.asarray(values)[self.perm]


def restricted_permutation(c: Sequence, rng: RngStream | np.random.Generator) -> RestrictedPermutation:
    strata = np.asarray(c).astype(str)
    gen = _as_generator(rng)
    perm = np.arange(strata.size)
    for level in np.unique(strata):
        members = np.flatnonzero(strata == level)
        perm[members] = members[gen.permutation(members.size)]
    return RestrictedPermutation(perm=perm, strata=strata)


def restricted_shuffle(y: Sequence, c: Sequence, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Shuffle ``y`` independently within each level of ``c``."""
    y = np.asarray(y)
    c = np.asarray(c)
    if y.shape[0] != c.shape[0]:
        raise ContractError(f"Length mismatch: y has {y.shape[0]} values, c has {c.shape[0]}")
    if y.shape[0] == 0:
        return y.copy()
    strata = c.astype(str)
    gen = _as_generator(rng)
    out = y.copy()
    for level in np.unique(strata):
        members = np.flatnonzero(strata == level)
        out[members] = y[members[gen.permutation(members.size)]]
    return out


def standard_shuffle(y: Sequence, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Uniform shuffle over all n! orderings."""
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise ContractError("Cannot shuffle an empty vector")
    return y[_as_generator(rng).permutation(y.shape[0])]


def restricted_count(c: Sequence) -> int:
    """Number of restricted index permutations: product of stratum factorials."""
    _, sizes = np.unique(np.asarray(c).astype(str), return_counts=True)
    return math.prod(math.factorial(int(s)) for s in sizes)


def enumerate_restricted(y: Sequence, c: Sequence, cap: int = 100_000) -> Iterator[np.ndarray]:
    """Yield every restricted rearrangement of ``y`` once (distinct as index permutations)."""
    y = np.asarray(y)
    strata = np.asarray(c).astype(str)
    if y.shape[0] != strata.shape[0]:
        raise ContractError("Length mismatch between y and c")
    total = restricted_count(strata)
    if total > cap:
        raise EnumerationCapError(f"{total} restricted permutations exceed the cap of {cap}")

    groups = [np.flatnonzero(strata == level) for level in np.unique(strata)]
    for choice in itertools.product(*(itertools.permutations(g) for g in groups)):
        out = y.copy()
        for members, image in zip(groups, choice):
            out[members] = y[list(image)]
        yield out
