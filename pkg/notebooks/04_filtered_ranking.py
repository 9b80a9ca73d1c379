# %% [markdown]
# # Filtered ranking, by hand and by the library
#
# A test fact yields one query per element. The gold answer is ranked against
# every candidate of its class after removing candidates that would complete
# a fact already known in any split.

# %%
import numpy as np

from gran.data import Dataset, Fact, MaskedInstance
from gran.evaluation import evaluate, format_report, metrics_from_ranks, rank_answer

# %% [markdown]
# Ties get the mean rank over all orderings of the tied group. With scores
# `[0.7, 0.7, 0.7, 0.1]` the gold item (index 0) could land in place 1, 2 or 3,
# so its rank is 2.

# %%
print(rank_answer([0.7, 0.7, 0.7, 0.1], gold=0))
print(rank_answer([0.5, 0.9, 0.1], gold=0))              # one candidate beats it
print(rank_answer([0.5, 0.9, 0.1], gold=0, filter_set={1}))  # unless that one is filtered

# %%
print(metrics_from_ranks([1, 2, 4]))  # MRR is (1 + 1/2 + 1/4) / 3

# %% [markdown]
# ## A toy corpus
#
# Two facts share a subject, relation and qualifier but differ in their
# object. When the object of the test fact is queried, the train fact's object
# is a second correct answer and must not count against the model.

# %%
train = [
    Fact("ada", "worked_on", "engine", (("role", "analyst"),)),
    Fact("babbage", "worked_on", "engine", (("role", "designer"),)),
]
test = [Fact("ada", "worked_on", "notes", (("role", "analyst"),))]
ds = Dataset.from_named({"train": train, "dev": [], "test": test})
vocab = ds.vocab

q = MaskedInstance(ds["test"][0], 2)  # hide the object
print("filtered for this query:", [vocab.name(i) for i in ds.filter_index.answers(q)])

# %% [markdown]
# A scorer maps a list of masked instances to one score row per instance,
# over entities or relations depending on the hidden slot. This one prefers
# whatever entity was registered first, so it puts "engine" above "notes".

# %%
def first_come(instances):
    rows = []
    for inst in instances:
        n = vocab.num_entities if inst.is_entity else vocab.num_relations
        rows.append(-np.arange(n, dtype=float))
    return rows


metrics = evaluate(ds["test"], first_come, ds.filter_index, vocab)
print(format_report(metrics, title="toy corpus, first-come scorer"))

# %% [markdown]
# The object query ranks "notes" first because "engine" is filtered out. The
# breakdown by arity only fills the n>2 bucket, since the only test fact has
# one qualifier.
