"""Walk through the autodiff core: build a small graph by hand, then verify
every gradient against 64-bit central differences.

Run: python demos/01_autodiff_and_gradients.py
"""

import numpy as np

from fedconv import autodiff as ad
from fedconv.autodiff import Tensor
from fedconv.gradcheck import finite_diff_check

rng = np.random.default_rng(0)

# A miniature forward pass: depth-wise conv -> SiLU -> pool -> linear -> loss.
x = Tensor(rng.standard_normal((2, 4, 8, 8)), requires_grad=True)
w_dw = Tensor(rng.standard_normal((4, 1, 3, 3)) * 0.2, requires_grad=True)
w_head = Tensor(rng.standard_normal((3, 4)) * 0.2, requires_grad=True)
b_head = Tensor(np.zeros(3), requires_grad=True)

h = ad.conv2d(x, w_dw, stride=1, padding=1, groups=4)   # depth-wise
h = ad.silu(h)
h = ad.global_avg_pool(h)
logits = ad.linear(h, w_head, b_head)
loss = ad.softmax_cross_entropy(logits, np.array([0, 2]))
loss.backward()

print(f"loss = {float(loss.data):.4f}")
print(f"grad norms: x {np.linalg.norm(x.grad):.4f}  dw {np.linalg.norm(w_dw.grad):.4f}  "
      f"head {np.linalg.norm(w_head.grad):.4f}")

# Now check each op in isolation against central differences.
print("\nfinite-difference check (max relative error, tolerance 1e-6):")
checks = [
    ("conv2d (grouped, strided)",
     lambda a, b: ad.conv2d(a, b, stride=2, padding=2, groups=2),
     [rng.standard_normal((1, 4, 8, 8)), rng.standard_normal((6, 2, 5, 5))]),
    ("layer_norm_c", ad.layer_norm_c,
     [rng.standard_normal((2, 4, 3, 3)), rng.standard_normal(4), rng.standard_normal(4)]),
    ("batch_norm (train)",
     lambda a, g, b: ad.batch_norm(a, g, b, np.zeros(3), np.ones(3), training=True),
     [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal(3), rng.standard_normal(3)]),
    ("gelu", ad.gelu, [rng.standard_normal((2, 4, 5, 5))]),
    ("silu", ad.silu, [rng.standard_normal((2, 4, 5, 5))]),
    ("maxpool2d", lambda a: ad.maxpool2d(a, 2, 2), [rng.standard_normal((2, 3, 6, 6))]),
]
for name, fn, inputs in checks:
    err = finite_diff_check(fn, inputs)
    print(f"  {name:28s} {err:.3e}")
