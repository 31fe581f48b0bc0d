"""Synthetic house -> baselines -> quantized and distilled variants -> report.

Run: python demos/02_desk_scale_pipeline.py
"""
import logging

from tinyloc.data import SynthConfig, generate_synthetic
from tinyloc.harness import DEFAULT_SWEEP, VARIANTS, ExperimentConfig, emit_report, run_experiment
from tinyloc.train import TrainConfig

logging.basicConfig(level=logging.WARNING)

data = generate_synthetic(SynthConfig(room_count=3, ap_count=4, seed=7))
print(f"synthetic house: {data.class_count} rooms, {data.feature_dim} APs, "
      f"{len(data.train)}/{len(data.val)}/{len(data.test)} train/val/test windows of "
      f"{data.train[0].features.shape[0]} samples")

# every model in the sweep is trained once; the best validation model is the
# teacher for the distillation variants
cfg = ExperimentConfig(list(DEFAULT_SWEEP), VARIANTS, seed=7, dataset=data,
                       train=TrainConfig(epochs=30))
rows = run_experiment(cfg)
teacher = next(r.teacher for r in rows if r.teacher)
print(f"teacher: {teacher}\n")
print(emit_report(rows, "md"))

print("size changes per variant (bytes):")
for r in rows:
    print(f"  {r.model:12s} {r.variant:22s} {r.serialized_bytes:7d}  F1 {100 * r.macro_f1:6.2f}")
