# %% [markdown]
# # The tensor engine
#
# Everything in gran runs on a small reverse-mode autodiff layer over numpy.
# A `Tensor` wraps an array and, while gradients are enabled, remembers the
# closure that pushes an upstream gradient back to its parents.

# %%
import numpy as np

from gran import tensor as T

x = T.Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
w = T.Tensor(np.array([0.3, -0.7]), requires_grad=True)

y = T.gelu(x * w).sum()  # w broadcasts over the rows of x
y.backward()
print("y      =", y.item())
print("dy/dx  =\n", x.grad)
print("dy/dw  =", w.grad)  # summed over the broadcast axis

# %% [markdown]
# Broadcasting is undone on the way back, so `w.grad` has the shape of `w`.
# A quick finite-difference check confirms the numbers above. Gradient checks
# use float64, which `dtype_scope` switches on for the block.

# %%
def numeric_grad(f, arr, h=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


with T.dtype_scope(np.float64):
    xs = np.array([[1.0, -2.0], [0.5, 3.0]])
    ws = np.array([0.3, -0.7])

    def f():
        with T.no_grad():
            return T.gelu(T.as_tensor(xs) * T.as_tensor(ws)).sum().item()

    print("numeric dy/dw =", numeric_grad(f, ws))

# %% [markdown]
# ## Attention-shaped ops
#
# `einsum` takes explicit subscripts (no ellipsis) and differentiates through
# every operand. Here is one softmax attention head written directly with it.

# %%
rng = np.random.default_rng(0)
with T.dtype_scope(np.float64):
    X = T.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    Wq, Wk, Wv = (T.Tensor(rng.normal(size=(6, 3)), requires_grad=True) for _ in range(3))
    q, k, v = X @ Wq, X @ Wk, X @ Wv
    att = T.softmax(T.einsum("ic,jc->ij", q, k) * (1 / np.sqrt(3)), axis=-1)
    out = T.einsum("ij,jc->ic", att, v)
    (out * out).sum().backward()

print("attention rows sum to", att.data.sum(axis=1))
print("|dL/dWq| =", np.linalg.norm(Wq.grad))

# %% [markdown]
# Inside `no_grad` no closures are recorded, which is what evaluation and
# prediction use.

# %%
with T.no_grad():
    z = T.exp(X)
print("tracked under no_grad:", z.requires_grad)
