import numpy as np
import pytest

from gran.data import Dataset, Fact
from gran.model import init_params
from gran.tensor import Tensor

# criterion number -> list of (part, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(passed for _, passed, _ in parts)
        detail = "; ".join(f"{part}: {'ok' if passed else 'FAILED'} ({info})" for part, passed, info in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def numerical_grad(f, x, step=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = f()
        x[i] = orig - step
        lo = f()
        x[i] = orig
        grad[i] = (hi - lo) / (2 * step)
    return grad


def rel_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def check_grads(build, inputs, step=1e-5, tol=1e-4):
    """``build(*tensors)`` returns a scalar Tensor; compare tape vs finite differences."""
    tensors = [Tensor(x, requires_grad=True, dtype=np.float64) for x in inputs]
    build(*tensors).backward()
    for t in tensors:
        num = numerical_grad(lambda: build(*tensors).item(), t.data, step)
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=1e-7)


def make_params(config, num_relations=3, num_entities=5, seed=0, dtype=np.float64, scale=0.5):
    """Random parameters with nonzero biases so every code path matters."""
    rng = np.random.default_rng(seed)
    params = init_params(config, num_relations, num_entities, rng, dtype)
    for _, t in params.items():
        t.data[...] = rng.normal(0.0, scale, size=t.shape) + (1.0 if t.name.endswith("gain") else 0.0)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def curie():
    return Fact(
        "MarieCurie", "award-received", "NobelPhysics",
        (("point-in-time", "1903"), ("together-with", "PierreCurie"), ("together-with", "HenriBecquerel")),
    )


@pytest.fixture
def tiny_dataset():
    named = {
        "train": [
            Fact("a", "r", "b", (("t", "c"), ("u", "d"))),
            Fact("c", "r", "b"),
            Fact("d", "q", "e", (("t", "a"),)),
        ],
        "dev": [Fact("a", "q", "c")],
        "test": [Fact("e", "r", "b", (("u", "c"),))],
    }
    return Dataset.from_named(named)
