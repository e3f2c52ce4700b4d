"""Two views of activation statistics: the raw curves under standard-normal
input (Monte-Carlo), and per-layer means measured through an actual model.

Run: python demos/05_activation_statistics.py
"""

import numpy as np

from fedconv import autodiff as ad
from fedconv.autodiff import Tensor
from fedconv.models import ArchConfig, Network, mean_activation_stat

rng = np.random.default_rng(0)
z = Tensor(rng.standard_normal(10**6).reshape(1, -1))

print("mean activation of each curve on N(0,1) input (1e6 samples):")
curves = [
    ("relu", ad.relu(z)),
    ("lrelu", ad.leaky_relu(z, 0.01)),
    ("softplus", ad.softplus(z)),
    ("gelu", ad.gelu(z)),
    ("silu", ad.silu(z)),
    ("elu", ad.elu(z, 1.0)),
]
for name, out in curves:
    print(f"  {name:9s} {float(out.data.mean()):+.4f}")

print("\nper-layer means through a small all-activation model:")
for kind in ("relu", "softplus", "silu"):
    cfg = ArchConfig(stem="conv", block="invert_up", channels=(8, 8, 8, 8),
                     depths=(1, 1, 1, 1), kernel_size=3, activation=kind,
                     act_placement="all", norm_placement="none",
                     norm_kind="none", num_classes=4, input_resolution=32)
    net = Network(cfg)
    net.init_params(np.random.default_rng(1))
    batch = rng.standard_normal((8, 3, 32, 32))
    means, overall = mean_activation_stat(net, batch)
    per_layer = " ".join(f"{v:+.3f}" for v in means.values())
    print(f"  {kind:9s} overall {overall:+.4f}   layers: {per_layer}")
