"""Build the architecture family and inspect its cost accounting: block
variants, stems, parameter/FLOPs counts, and depth calibration against a
FLOPs budget.

Run: python demos/02_architectures_and_cost.py
"""

from dataclasses import replace

from fedconv.models import (ArchConfig, Network, calibrate_depths,
                            count_flops, count_params, fedconv_config,
                            fedconv_tiny_config, resnet_m_config)

print("full-scale configurations at 224x224 (10 classes):")
print(f"{'model':24s} {'params':>12s} {'flops':>14s}")
for name, cfg in [
    ("resnet_m (normal, k3)", resnet_m_config()),
    ("fedconv-normal", fedconv_config(block="normal")),
    ("fedconv-invert", fedconv_config(block="invert")),
    ("fedconv-invertup", fedconv_config(block="invert_up")),
]:
    print(f"{name:24s} {count_params(cfg):>12,d} {count_flops(cfg):>14,d}")

budget = int(4.6e9)
depths = calibrate_depths(fedconv_config(), budget, tolerance=0.15)
print(f"\ndepth calibration to {budget:,} FLOPs (ratio 1:1:3:1): {depths}")

print("\nkernel-size sweep on the invert-up block (full scale):")
for k in (3, 5, 7, 9, 11):
    cfg = replace(fedconv_config(), kernel_size=k)
    print(f"  k={k:<2d} params={count_params(cfg):>12,d} flops={count_flops(cfg):>14,d}")

tiny = fedconv_tiny_config()
net = Network(tiny)
print(f"\nfedconv-tiny layer registry ({count_params(tiny):,} params):")
for name, _ in list(net.named_parameters().items())[:8]:
    print(f"  {name}")
print(f"  ... {len(net.named_parameters())} parameters total")
