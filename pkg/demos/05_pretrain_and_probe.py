"""Masked-token pretraining, then a linear probe on frozen features.

Patches of the histogram are masked and the transformer must predict
their tokenizer ids from surrounding context. No labels are involved.
The probe then trains only a linear classifier on mean-pooled frozen
features; the comparison against a random-init backbone shows what
pretraining bought.

Small scale so it finishes in about a minute; the acceptance suite runs
the full-size version of this comparison over three seeds.
"""

import numpy as np

from evmem.data import (INIT_STEP, STAGE_PRETRAIN, PreprocessConfig, step_rng)
from evmem.downstream import ProbeConfig, linear_probe
from evmem.dvae import DvaeConfig, DvaeTrainConfig, train_dvae
from evmem.synth import gen_dataset
from evmem.vit import PretrainConfig, VitConfig, init_vit, pretrain

train, test = gen_dataset(per_class=32, seed=5, width=32, height=32)
pp = PreprocessConfig(target_size=(32, 32))
pp_pre = PreprocessConfig(target_size=(32, 32), use_randaugment=False)

tok, _, _ = train_dvae(train, DvaeTrainConfig(
    steps=150, batch_size=8, kl_weight=0.05, hard_frac=0.0, tau_end=0.25,
    seed=0, preprocess=pp,
    model=DvaeConfig(vocab_size=32, latent_dim=16, patch=8, hidden=64, channels=2)))

vcfg = VitConfig(layers=2, dim=48, heads=4, mlp_dim=96, patch=8,
                 channels=2, rows=4, cols=4, vocab_size=32)
model, curve, _ = pretrain(tok, train, PretrainConfig(
    steps=250, batch_size=8, mask_ratio=0.75, objective="mem",
    seed=0, preprocess=pp_pre, model=vcfg))
print(f"pretrain loss {curve[0][1]:.3f} -> {curve[-1][1]:.3f}  "
      f"(chance level ln 32 = {np.log(32):.3f})")
print(f"masked-token accuracy {curve[-1][3]:.0%}")

probe = ProbeConfig(steps=300, lr=3e-2, seed=0, preprocess=pp)
_, top1 = linear_probe(model, train, test, probe)
rand = init_vit(vcfg, step_rng(0, STAGE_PRETRAIN, INIT_STEP))
_, rand_top1 = linear_probe(rand, train, test, probe)
print(f"\nlinear probe, pretrained backbone: {top1:.0%}")
print(f"linear probe, random backbone:     {rand_top1:.0%}")
