"""
Reverse-mode gradients on small numpy tensors
=============================================

Every model in the package runs on the little tape in ``stoxlstm.numerics``.
This walk-through builds a few expressions, pulls gradients out of them and
checks them against central differences.
"""

import numpy as np

from stoxlstm import numerics as nm

# A leaf is a tensor that asks for gradients
w = nm.parameter([[0.5, -1.0], [2.0, 0.25]], name="w")
x = nm.tensor([[1.0, 3.0]])

# Operators record themselves as they run
y = nm.tanh(x @ w).sum()
y.backward()
print("loss", y.item())
print("dloss/dw\n", w.grad)

# Fan-out adds up: x + x has derivative 2
a = nm.parameter(1.5)
(a + a).backward()
print("d(a + a)/da =", a.grad)

# The graph is kept, so a second backward without zeroing doubles .grad
w.zero_grad()
y.backward()
y.backward()
print("after two backward calls\n", w.grad)

# Broadcasting works like numpy and gradients fold back onto the small operand
rows = nm.parameter(np.ones((4, 3)))
bias = nm.parameter(np.zeros(3))
(nm.square(rows + bias) * np.arange(3.0)).sum().backward()
print("bias grad", bias.grad)

# Finite differences as an independent check
data = np.random.default_rng(0).standard_normal((3, 3))
leaf = nm.parameter(data.copy())
nm.logsigmoid(leaf @ leaf).sum().backward()
(numeric,) = nm.finite_difference_grad(lambda: nm.logsigmoid(nm.Tensor(data) @ nm.Tensor(data)).data.sum(), [data])
print("max |analytic - numeric|", np.abs(leaf.grad - numeric).max())

# Inside no_grad nothing is recorded
with nm.no_grad():
    z = w * 2.0
print("recorded under no_grad:", z.requires_grad)
