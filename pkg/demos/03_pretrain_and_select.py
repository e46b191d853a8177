#!/usr/bin/env python3
"""Pretrain the two autoencoder architectures and pick one by cross-validation.

The alpha architecture compresses a 32x200 epoch to 5 latent channels x 9
latent timepoints, beta to 10 x 20. Here we work at a smaller desk-scale
geometry (8 channels x 40 timepoints) so the script runs in ~half a minute.
"""

import numpy as np

from erpcoder import autoencoder as ae
from erpcoder import synth
from erpcoder.data import filter_artifacts

# the named plans pin the latent geometry at the standard input size
for arch in ("alpha", "beta"):
    plan = ae.build_layer_plan(ae.AutoencoderSpec(arch, False, 32, 200))
    print(f"{arch}: latent {plan.latent_channels} x {plan.latent_timepoints}")

# beta-generated synthetic data at a small geometry both plans accept
config = synth.SynthConfig(n_subjects=2, n_sentences=30, words_per_sentence=4,
                           n_channels=8, n_timepoints=40, architecture="beta",
                           noise_sd=0.02, seed=21)
data = synth.generate(config)
dataset, meta = filter_artifacts(data.dataset, data.meta, include_first_word=True)
print(f"\npretraining on {dataset.n_trials} trials of "
      f"{dataset.n_channels}x{dataset.n_timepoints}")

spec = ae.AutoencoderSpec("beta", False, 8, 40)
params, history = ae.pretrain(spec, dataset, meta, epochs=60, lr=0.003, seed=1)
mse = ae.reconstruction_mse(params, dataset, meta)
print(f"beta reconstruction MSE {mse:.5f}, "
      f"R2 {1 - mse / dataset.data.var():.3f}, best epoch {history.best_epoch}")

# 3-fold cross-validated comparison; the generating architecture should win
report = ae.select_architecture(dataset, meta, k=3, seed=4, epochs=40, lr=0.003)
for name, entry in report["candidates"].items():
    print(f"  {name}: mean MSE {entry['mean_mse']:.5f}  mean R2 {entry['mean_r2']:.3f}")
print("winner:", report["winner"])
