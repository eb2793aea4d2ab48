"""Tour of the differentiable tensor core.

Every operation the policy uses carries its own backward rule, and each
one can be audited against central finite differences on the spot.
"""

import numpy as np

from stereonav import nn
from stereonav import tensor as T
from stereonav.tensor import Tensor, check_gradients

rng = np.random.default_rng(0)

print("== linear layer, checked against finite differences ==")
x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
W = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
b = Tensor(rng.standard_normal(2), requires_grad=True)
report = check_gradients(T.linear, [x, W, b])
print(f"max relative error vs central differences: {report.max_rel_error:.2e}")

print("\n== softmax is shift invariant and row-stochastic ==")
v = rng.standard_normal((2, 5))
a = T.softmax(Tensor(v)).data
b2 = T.softmax(Tensor(v + 500.0)).data
print(f"row sums: {a.sum(axis=1)}, shift changes outputs by {np.abs(a - b2).max():.2e}")

print("\n== 2D rotary encoding ==")
q = rng.standard_normal((1, 16))
p1 = np.array([[3.0, -2.0]])
p2 = np.array([[1.0, 4.0]])
enc = T.rope2d(Tensor(q), p1).data
print(f"norm preserved: |x|={np.linalg.norm(q):.6f} |rope(x)|={np.linalg.norm(enc):.6f}")
k = rng.standard_normal((1, 16))
lhs = (T.rope2d(Tensor(q), p1).data @ T.rope2d(Tensor(k), p2).data.T).item()
rhs = (T.rope2d(Tensor(q), p1 - p2).data @ T.rope2d(Tensor(k), np.zeros((1, 2))).data.T).item()
print(f"dot products depend only on relative position: {lhs:.9f} == {rhs:.9f}")

print("\n== multi-head attention with a single key ignores the query ==")
mha = nn.MultiHeadAttention(8, 2, rng)
kv = Tensor(rng.standard_normal((1, 8)))
out1 = mha(Tensor(rng.standard_normal((2, 8))), kv, kv).data
out2 = mha(Tensor(rng.standard_normal((2, 8))), kv, kv).data
print(f"output difference across two random queries: {np.abs(out1 - out2).max():.2e}")

print("\n== a deliberately wrong gradient is caught ==")


def bad_square(t):
    out = t * t
    broken = Tensor._result(out.data, (t,), lambda g: t._accum(g * 3.0 * t.data))
    return broken


bad = check_gradients(bad_square, [Tensor(np.array([1.0, 2.0]), requires_grad=True)])
print(f"negative control max error: {bad.max_rel_error:.2f} (>> tolerance)")
