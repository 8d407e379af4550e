"""Multi-attribute group space: indexing users into groups and sampling keys."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import Dataset
from .exceptions import ConfigError

GroupKey = tuple[int, ...]


@dataclass(frozen=True)
class SizeFilter:
    """Groups with fewer than ``min_count(n_users)`` members are invisible to search."""

    min_fraction: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.min_fraction < 1.0:
            raise ConfigError(f"min_fraction must be in [0, 1), got {self.min_fraction}")

    def min_count(self, n_users: int) -> int:
        return max(1, math.ceil(self.min_fraction * n_users))


class GroupIndex:
    """Users grouped by their value codes on a fixed list of attributes.

    ``boundaries[i]`` is the number of codes of attribute ``i`` (valid codes are
    ``0 .. boundaries[i] - 1``); ``distributions[i]`` is the empirical frequency
    of each code among the indexed users.
    """

    def __init__(self, codes, boundaries: Sequence[int], attribute_names: Sequence[str] | None = None):
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim != 2:
            raise ConfigError("codes must be a 2-d array (n_users, n_attributes)")
        self.boundaries = tuple(int(b) for b in boundaries)
        if codes.shape[1] != len(self.boundaries):
            raise ConfigError("codes and boundaries disagree on the number of attributes")
        if codes.size and ((codes < 0).any() or (codes >= np.array(self.boundaries)).any()):
            raise ConfigError("attribute code outside its boundary")
        self.codes = codes
        self.attribute_names = list(attribute_names) if attribute_names is not None else [
            f"a{i}" for i in range(len(self.boundaries))
        ]
        self.n_users = codes.shape[0]

        groups: dict[GroupKey, list[int]] = {}
        for i, row in enumerate(map(tuple, codes.tolist())):
            groups.setdefault(row, []).append(i)
        self.groups = {key: np.asarray(members, dtype=np.intp) for key, members in sorted(groups.items())}

        dists = []
        for a, b in enumerate(self.boundaries):
            if self.n_users:
                dists.append(np.bincount(codes[:, a], minlength=b) / self.n_users)
            else:
                dists.append(np.full(b, 1.0 / b))
        self.distributions = dists

    @property
    def n_attributes(self) -> int:
        return len(self.boundaries)

    @property
    def n_groups(self) -> int:
        """Number of non-empty groups."""
        return len(self.groups)

    @property
    def space_size(self) -> int:
        return math.prod(self.boundaries)

    def members(self, key) -> np.ndarray:
        return self.groups.get(tuple(key), np.empty(0, dtype=np.intp))

    def size(self, key) -> int:
        return len(self.groups.get(tuple(key), ()))

    def key_of(self, user: int) -> GroupKey:
        return tuple(int(c) for c in self.codes[user])


def build_index(ds: Dataset, selected_attributes: Sequence[str] | None = None) -> GroupIndex:
    """Index ``ds.users`` by the selected attributes (all schema attributes by default)."""
    if selected_attributes is None:
        selected_attributes = ds.schema.names
    selected_attributes = list(selected_attributes)
    if not selected_attributes:
        raise ConfigError("at least one attribute must be selected")
    unknown = [name for name in selected_attributes if name not in ds.schema.names]
    if unknown:
        raise ConfigError(f"unknown attribute(s) {unknown}; schema has {ds.schema.names}")
    cols = [ds.schema.index(name) for name in selected_attributes]
    if len(set(cols)) != len(cols):
        raise ConfigError(f"attribute selected twice: {selected_attributes}")
    codes = np.array([[u.sensitive[c] for c in cols] for u in ds.users], dtype=np.int64).reshape(
        len(ds.users), len(cols)
    )
    boundaries = [ds.schema.attributes[c].n_values for c in cols]
    return GroupIndex(codes, boundaries, selected_attributes)


def enumerate_valid_groups(idx: GroupIndex, size_filter: SizeFilter = SizeFilter()) -> list[GroupKey]:
    min_count = size_filter.min_count(idx.n_users)
    # idx.groups is built in lexicographic key order
    return [key for key, members in idx.groups.items() if len(members) >= min_count]


def sample_keys(idx: GroupIndex, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` keys, each coordinate independently from its empirical distribution."""
    out = np.empty((n, idx.n_attributes), dtype=np.int64)
    for a, (b, p) in enumerate(zip(idx.boundaries, idx.distributions)):
        out[:, a] = rng.choice(b, size=n, p=p)
    return out


def sample_uniform_keys(idx: GroupIndex, rng: np.random.Generator, n: int) -> np.ndarray:
    out = np.empty((n, idx.n_attributes), dtype=np.int64)
    for a, b in enumerate(idx.boundaries):
        out[:, a] = rng.integers(0, b, size=n)
    return out


def sample_key(idx: GroupIndex, rng: np.random.Generator) -> GroupKey:
    return tuple(int(c) for c in sample_keys(idx, rng, 1)[0])


def key_labels(key: Sequence[int], idx: GroupIndex, schema=None) -> dict[str, str]:
    """Render a key as ``{attribute: label}``; raw codes when no schema is available."""
    out = {}
    for name, code in zip(idx.attribute_names, key):
        if schema is not None:
            out[name] = schema.label(schema.index(name), int(code))
        else:
            out[name] = str(int(code))
    return out
