"""Train the discrete tokenizer on a small event dataset.

The tokenizer is a discrete VAE: histogram patches are encoded to a
categorical distribution over a learned codebook, sampled with
Gumbel-Softmax, and decoded back. After training, every histogram is
summarized by a short grid of integer tokens.
"""

import numpy as np

from evmem.data import PreprocessConfig, preprocess_eval
from evmem.dvae import (DvaeConfig, DvaeTrainConfig, autoencode, tokenize,
                        train_dvae, eval_recon_mse, codebook_usage)
from evmem.synth import gen_dataset

train, test = gen_dataset(per_class=24, seed=5, width=32, height=32)
pp = PreprocessConfig(target_size=(32, 32))
cfg = DvaeTrainConfig(
    steps=150,
    batch_size=8,
    kl_weight=0.05,
    hard_frac=0.0,
    tau_end=0.25,
    seed=0,
    preprocess=pp,
    model=DvaeConfig(vocab_size=32, latent_dim=16, patch=8, hidden=64, channels=2),
)

model, curve, _ = train_dvae(train, cfg)
print(f"trained {cfg.steps} steps: recon {curve[0][1]:.4f} -> {curve[-1][1]:.4f}")
print(f"held-out mse  {eval_recon_mse(model, test, pp):.4f}")
print(f"codebook use  {codebook_usage(model, test, pp):.0%} of {cfg.model.vocab_size} entries")

hist = preprocess_eval(test.streams[0], pp)
tokens = tokenize(model, hist)
print(f"\none {hist.shape} histogram -> {tokens.size} tokens on a "
      f"{tokens.shape[0]}x{tokens.shape[1]} grid:")
print(tokens)
recon = autoencode(model, hist)
err = float(((recon - hist) ** 2).mean())
print(f"decode(encode(x)) mse {err:.4f}")
