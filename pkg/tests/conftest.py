import pytest

from rankaudit.catalog import Attribute, AttributeSchema, Candidate, Dataset, ItemRecord, UserRecord


def make_user(uid, sensitive, cands, k=None, history=()):
    """``cands`` is a list of (item, score, relevant), already in rank order."""
    cands = tuple(Candidate(i, float(s), bool(r)) for i, s, r in cands)
    return UserRecord(uid, tuple(sensitive), tuple(history), k if k is not None else min(3, len(cands)), cands)


def make_items(spec):
    """``spec`` maps item id -> (tags, interactions)."""
    return {i: ItemRecord(i, frozenset(tags), n) for i, (tags, n) in spec.items()}


def make_dataset(users, items, n_values=(2, 2), total=None):
    schema = AttributeSchema(tuple(
        Attribute(f"a{i}", tuple(f"v{c}" for c in range(v))) for i, v in enumerate(n_values)
    ))
    if total is None:
        total = sum(it.train_interactions for it in items.values())
    return Dataset(schema, tuple(users), items, total)


def biased_dataset():
    """Attribute a0=1 users get popular, same-tag top-k lists; a0=0 users are well served."""
    spec = {f"p{j}": ({"pop"}, 50) for j in range(4)}
    spec.update({f"n{j}": ({f"t{j}"}, 2) for j in range(6)})
    items = make_items(spec)
    users = []
    for i in range(40):
        a0, a1 = i % 2, (i // 2) % 2
        if a0:
            cands = [(f"p{j}", 1 - j / 20, j == 0) for j in range(4)] + [(f"n{j}", 0.5 - j / 20, False) for j in range(6)]
        else:
            cands = [(f"n{j}", 1 - j / 20, j == 1) for j in range(6)] + [(f"p{j}", 0.5 - j / 20, False) for j in range(4)]
        users.append(make_user(f"u{i}", (a0, a1), cands, k=3, history=("n0", "n1")))
    return make_dataset(users, items)


@pytest.fixture
def tiny_ds():
    items = make_items({
        "i1": ({"a"}, 10), "i2": ({"a", "b"}, 5), "i3": ({"c"}, 0), "i4": ({"d"}, 25), "i5": (set(), 60),
    })
    users = [
        make_user("u1", (0, 0), [("i1", 0.9, True), ("i2", 0.8, False), ("i3", 0.5, False), ("i4", 0.1, True)],
                  history=("i5",)),
        make_user("u2", (0, 1), [("i2", 0.7, False), ("i3", 0.6, True), ("i1", 0.3, False), ("i5", 0.2, False)],
                  history=("i1", "i4")),
        make_user("u3", (1, 1), [("i4", 0.9, False), ("i5", 0.4, False), ("i1", 0.3, True), ("i2", 0.1, False)]),
    ]
    return make_dataset(users, items)


def rare_worst_config(n_users=1500, n_values=(2, 7, 21), skew=0.5, seed=0, **kw):
    """A syngen config whose planted worst group sits where almost no users live.

    Marginal centres depend only on the seed, so a first pass locates them and
    the worst key is planted at the far end of every attribute.
    """
    from rankaudit.groupspace import build_index
    from rankaudit.syngen import SynConfig, generate

    probe, _ = generate(SynConfig(n_users=200, n_values=n_values, skew=skew, seed=seed, **kw))
    centers = [int(d.argmax()) for d in build_index(probe).distributions]
    worst = tuple(0 if c >= v / 2 else v - 1 for c, v in zip(centers, n_values))
    return SynConfig(n_users=n_users, n_values=n_values, skew=skew, seed=seed, planted_worst=worst, **kw)
