"""
Key rate relative to a stable source
====================================

Sweep the father-pulse bound, then the attenuator bound, and compare the
economic and the normal worst case.
"""
import dataclasses

from fluctqkd.cli import sweep_table
from fluctqkd.config import parse_config

cfg = parse_config("[run]\npreset = peng50km-like\n")

print("father-pulse fluctuation, attenuators stable")
print(f"{'delta':>6} {'economic':>9} {'normal':>9}")
rows = sweep_table(cfg, ("economic", "normal"))
by_delta = {}
for delta, eps, variant, ok, rate, rate0, rel, *_ in rows:
    by_delta.setdefault(delta, {})[variant] = rel
for delta, rel in sorted(by_delta.items()):
    print(f"{delta:6.2f} {rel['economic']:9.3f} {rel['normal']:9.3f}")

# Attenuator fluctuation does not cancel in the ratio and hurts both.
print("\nattenuator fluctuation, father pulse stable")
cfg = dataclasses.replace(cfg, sweep_delta=(0.0,), sweep_eps=(0.0, 0.005, 0.01, 0.015, 0.02))
for delta, eps, variant, ok, rate, rate0, rel, *_ in sweep_table(cfg, ("economic",)):
    print(f"eps = {eps:5.3f}: relative rate {rel:.3f}")
