"""Dataset model and file IO for users, items and attribute schemas.

Three files make up a dataset:

* ``schema.json`` -- ``{"attributes": [{"name": "gender", "values": ["F", "M"]}, ...]}``;
  attribute value code ``i`` is the index into ``values``.
* ``users.jsonl`` -- one user per line with sensitive codes, history, ``k`` and the
  scored candidate pool.
* ``items.csv`` -- ``item_id,tags,train_interactions`` with ``|``-separated tags and an
  optional leading ``#total_interactions=<int>`` line.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .exceptions import DataError

TOTAL_HEADER = "#total_interactions="


@dataclass(frozen=True)
class Attribute:
    name: str
    values: tuple[str, ...]

    @property
    def n_values(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate attribute names in schema: {names}")
        for a in self.attributes:
            if a.n_values < 1:
                raise DataError(f"attribute {a.name!r} has no values")

    @classmethod
    def from_dict(cls, obj: dict) -> "AttributeSchema":
        try:
            attrs = tuple(
                Attribute(str(a["name"]), tuple(str(v) for v in a["values"]))
                for a in obj["attributes"]
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema: {exc}") from exc
        return cls(attrs)

    def to_dict(self) -> dict:
        return {"attributes": [{"name": a.name, "values": list(a.values)} for a in self.attributes]}

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def n_values(self) -> tuple[int, ...]:
        return tuple(a.n_values for a in self.attributes)

    @property
    def space_size(self) -> int:
        return math.prod(self.n_values)

    def index(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise DataError(f"unknown attribute {name!r}; schema has {self.names}")

    def label(self, attr: int, code: int) -> str:
        return self.attributes[attr].values[code]


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    tags: frozenset[str]
    train_interactions: int


class Candidate(NamedTuple):
    item: str
    score: float
    relevant: bool


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    sensitive: tuple[int, ...]
    history: tuple[str, ...]
    k: int
    candidates: tuple[Candidate, ...]

    @property
    def top_k(self) -> tuple[Candidate, ...]:
        return self.candidates[: self.k]

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "sensitive": list(self.sensitive),
            "history": list(self.history),
            "k": self.k,
            "candidates": [
                {"item": c.item, "score": c.score, "relevant": c.relevant} for c in self.candidates
            ],
        }


def sort_candidates(cands: Iterable[Candidate]) -> tuple[Candidate, ...]:
    # sorted() is stable, so equal scores keep input order
    return tuple(sorted(cands, key=lambda c: -c.score))


@dataclass(frozen=True)
class Dataset:
    schema: AttributeSchema
    users: tuple[UserRecord, ...]
    items: dict[str, ItemRecord] = field(hash=False)
    total_train_interactions: int

    @property
    def n_users(self) -> int:
        return len(self.users)

    def validate(self) -> None:
        """Check every cross-record invariant; raises DataError on the first violation."""
        if self.total_train_interactions <= 0 and self.items:
            raise DataError("total_train_interactions must be positive")
        n_values = self.schema.n_values
        seen: set[str] = set()
        for line, u in enumerate(self.users, start=1):
            _check_user(u, n_values, self.schema, line)
            if u.user_id in seen:
                raise DataError(f"user line {line}: duplicate user_id {u.user_id!r}")
            seen.add(u.user_id)
            for item in u.history:
                if item not in self.items:
                    raise DataError(f"user line {line}: history references unknown item {item!r}")
            for c in u.candidates:
                if c.item not in self.items:
                    raise DataError(f"user line {line}: candidate references unknown item {c.item!r}")


def _check_user(u: UserRecord, n_values: Sequence[int], schema: AttributeSchema, line: int) -> None:
    if len(u.sensitive) != len(n_values):
        raise DataError(
            f"user line {line}: field 'sensitive' has {len(u.sensitive)} entries, schema has {len(n_values)}"
        )
    for a, (code, nv) in enumerate(zip(u.sensitive, n_values)):
        if not 0 <= code < nv:
            raise DataError(
                f"user line {line}: attribute {schema.attributes[a].name!r} code {code} outside [0, {nv - 1}]"
            )
    if not u.candidates:
        raise DataError(f"user line {line}: field 'candidates' is empty")
    for c in u.candidates:
        if not math.isfinite(c.score):
            raise DataError(f"user line {line}: field 'candidates' has non-finite score for {c.item!r}")
    if not 1 <= u.k <= len(u.candidates):
        raise DataError(f"user line {line}: field 'k'={u.k} outside [1, {len(u.candidates)}]")


def item_popularity(ds: Dataset, item_id: str) -> float:
    """Share of training interactions that hit ``item_id``, in percent."""
    try:
        item = ds.items[item_id]
    except KeyError:
        raise DataError(f"unknown item {item_id!r}") from None
    if ds.total_train_interactions <= 0:
        raise DataError("total_train_interactions is zero; popularity undefined")
    return item.train_interactions / ds.total_train_interactions * 100.0


# -- reading -----------------------------------------------------------------


def read_schema(path: str | Path) -> AttributeSchema:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return AttributeSchema.from_dict(obj)


def read_items(path: str | Path) -> tuple[dict[str, ItemRecord], int | None]:
    """Return the item map and the explicit ``|T|`` override, if the file carries one."""
    text = Path(path).read_text()
    lines = text.splitlines()
    total = None
    start = 0
    if lines and lines[0].startswith("#"):
        head = lines[0].strip()
        if not head.startswith(TOTAL_HEADER):
            raise DataError(f"{path} line 1: unrecognised comment {head!r}")
        try:
            total = int(head[len(TOTAL_HEADER):])
        except ValueError:
            raise DataError(f"{path} line 1: field 'total_interactions' is not an integer") from None
        start = 1
    reader = csv.DictReader(io.StringIO("\n".join(lines[start:])))
    need = {"item_id", "tags", "train_interactions"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise DataError(f"{path}: header must contain {sorted(need)}")
    items: dict[str, ItemRecord] = {}
    for row_no, row in enumerate(reader, start=start + 2):
        item_id = row["item_id"]
        if not item_id:
            raise DataError(f"{path} line {row_no}: field 'item_id' is empty")
        if item_id in items:
            raise DataError(f"{path} line {row_no}: duplicate item_id {item_id!r}")
        try:
            count = int(row["train_interactions"])
        except (TypeError, ValueError):
            raise DataError(f"{path} line {row_no}: field 'train_interactions' is not an integer") from None
        if count < 0:
            raise DataError(f"{path} line {row_no}: field 'train_interactions' is negative")
        tags = frozenset(t for t in (row["tags"] or "").split("|") if t)
        items[item_id] = ItemRecord(item_id, tags, count)
    return items, total


def _parse_user(obj: dict, line: int) -> UserRecord:
    def fail(name, why):
        raise DataError(f"user line {line}: field {name!r} {why}")

    for name in ("user_id", "sensitive", "history", "k", "candidates"):
        if name not in obj:
            fail(name, "is missing")
    if not isinstance(obj["sensitive"], list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in obj["sensitive"]
    ):
        fail("sensitive", "must be a list of integer codes")
    if not isinstance(obj["history"], list):
        fail("history", "must be a list")
    if not isinstance(obj["k"], int) or isinstance(obj["k"], bool):
        fail("k", "must be an integer")
    if not isinstance(obj["candidates"], list):
        fail("candidates", "must be a list")
    cands = []
    for c in obj["candidates"]:
        try:
            score = float(c["score"])
            cands.append(Candidate(str(c["item"]), score, bool(c["relevant"])))
        except (KeyError, TypeError, ValueError):
            fail("candidates", f"has a malformed entry {c!r}")
    return UserRecord(
        user_id=str(obj["user_id"]),
        sensitive=tuple(obj["sensitive"]),
        history=tuple(str(h) for h in obj["history"]),
        k=obj["k"],
        candidates=sort_candidates(cands),
    )


def read_users(path: str | Path) -> list[UserRecord]:
    users = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path} line {line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path} line {line_no}: expected a JSON object")
            users.append(_parse_user(obj, line_no))
    return users


def load_dataset(users_path, items_path, schema_path) -> Dataset:
    """Load and validate a dataset from its three files."""
    schema = read_schema(schema_path)
    items, total = read_items(items_path)
    users = read_users(users_path)
    if total is None:
        total = sum(it.train_interactions for it in items.values())
    ds = Dataset(schema=schema, users=tuple(users), items=items, total_train_interactions=total)
    ds.validate()
    return ds


# -- writing -----------------------------------------------------------------


def write_dataset(ds: Dataset, users_path, items_path, schema_path) -> None:
    Path(schema_path).write_text(json.dumps(ds.schema.to_dict(), indent=2) + "\n")
    with open(users_path, "w") as fh:
        for u in ds.users:
            fh.write(json.dumps(u.to_dict(), separators=(",", ":")) + "\n")
    derived = sum(it.train_interactions for it in ds.items.values())
    with open(items_path, "w", newline="") as fh:
        if ds.total_train_interactions != derived:
            fh.write(f"{TOTAL_HEADER}{ds.total_train_interactions}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "tags", "train_interactions"])
        for it in ds.items.values():
            w.writerow([it.item_id, "|".join(sorted(it.tags)), it.train_interactions])


def dataset_paths(directory: str | Path) -> tuple[Path, Path, Path]:
    """Conventional file names inside a dataset directory: users, items, schema."""
    d = Path(directory)
    return d / "users.jsonl", d / "items.csv", d / "schema.json"
