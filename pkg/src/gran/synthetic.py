"""Generated 3-ary datasets with a deterministic hidden rule.

Relations are split into primary relations and attributes. Every fact is
``(s, r, f_r(s))`` with one qualifier ``(a, g(s, a))``: each primary relation
is a fixed permutation of the entities and each qualifier value is a fixed
function of the subject and attribute. Dev and test facts only use
``(s, r)`` and ``(s, a)`` combinations seen in train, so every held-out
element can be recovered by memorizing the rule tables.
"""

from __future__ import annotations

import numpy as np

from .data import Fact


def rule_dataset(num_entities=200, num_relations=10, num_facts=1000, num_subjects=40,
                 dev_fraction=0.1, test_fraction=0.1, seed=0):
    """Named splits ``{"train", "dev", "test"}`` of rule-generated facts.

    Only the first ``num_subjects`` entities occur as subjects, which keeps the
    rule tables small enough to be seen several times per epoch. Objects and
    values range over all ``num_entities``.
    """
    if num_relations < 2:
        raise ValueError("need at least one primary relation and one attribute")
    if not 1 <= num_subjects <= num_entities:
        raise ValueError(f"num_subjects must be in [1, {num_entities}], got {num_subjects}")
    rng = np.random.default_rng(seed)
    n_primary = num_relations // 2
    primaries = list(range(n_primary))
    attributes = list(range(n_primary, num_relations))
    perms = {r: rng.permutation(num_entities) for r in primaries}
    values = rng.integers(0, num_entities, size=(num_entities, num_relations))

    combos = [(s, r, a) for s in range(num_subjects) for r in primaries for a in attributes]
    if num_facts > len(combos):
        raise ValueError(f"only {len(combos)} distinct facts exist, asked for {num_facts}")
    picked = [combos[i] for i in rng.choice(len(combos), size=num_facts, replace=False)]

    n_dev = int(round(dev_fraction * num_facts))
    n_test = int(round(test_fraction * num_facts))
    held = picked[: n_dev + n_test]
    train = picked[n_dev + n_test :]
    seen_sr = {(s, r) for s, r, _ in train}
    seen_sa = {(s, a) for s, _, a in train}
    dev, test = [], []
    for i, (s, r, a) in enumerate(held):
        if (s, r) not in seen_sr or (s, a) not in seen_sa:
            train.append((s, r, a))
            seen_sr.add((s, r))
            seen_sa.add((s, a))
        elif i < n_dev:
            dev.append((s, r, a))
        else:
            test.append((s, r, a))

    def make(s, r, a):
        return Fact(f"e{s}", f"r{r}", f"e{perms[r][s]}", ((f"r{a}", f"e{values[s, a]}"),))

    return {
        "train": [make(*c) for c in train],
        "dev": [make(*c) for c in dev],
        "test": [make(*c) for c in test],
    }
