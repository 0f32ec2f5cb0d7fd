"""Toy semantic segmentation with a per-patch head.

A linear head predicts one class per patch; predictions are upsampled
to pixels by nearest neighbor and scored with the standard confusion
matrix metrics (aAcc, mAcc, mIoU). Labels come from the generator's
own class maps, so the pipeline needs no hand annotation.
"""

import numpy as np

from evmem.data import PreprocessConfig
from evmem.downstream import (SegTrainConfig, attach_segmenter, eval_segmenter,
                              predict_segmenter, seg_confusion, seg_metrics,
                              train_segmenter)
from evmem.dvae import DvaeConfig, DvaeTrainConfig, train_dvae
from evmem.synth import gen_dataset, gen_seg_dataset
from evmem.vit import PretrainConfig, VitConfig, pretrain

train, _ = gen_dataset(per_class=32, seed=5, width=64, height=64)
samples = gen_seg_dataset(per_class=8, seed=9, width=64, height=64)
k = max(int(s.class_map.max()) for s in samples) + 1
fit, held = samples[:24], samples[24:]
print(f"{len(fit)} training maps, {len(held)} held out, {k} classes "
      "(0 is background)")

pp = PreprocessConfig(target_size=(64, 64))
tok, _, _ = train_dvae(train, DvaeTrainConfig(
    steps=200, batch_size=8, kl_weight=0.05, hard_frac=0.0, tau_end=0.25,
    seed=0, preprocess=pp,
    model=DvaeConfig(vocab_size=64, latent_dim=16, patch=16, hidden=128, channels=2)))
vcfg = VitConfig(layers=2, dim=64, heads=4, mlp_dim=128, patch=16,
                 channels=2, rows=4, cols=4, vocab_size=64)
backbone, _, _ = pretrain(tok, train, PretrainConfig(
    steps=400, batch_size=8, mask_ratio=0.75, objective="mem", seed=0,
    preprocess=PreprocessConfig(target_size=(64, 64), use_randaugment=False),
    model=vcfg))

model = attach_segmenter(backbone, k)
model, curve, _ = train_segmenter(model, fit, SegTrainConfig(
    steps=200, batch_size=8, lr=3e-3, seed=0, preprocess=pp))
print(f"seg loss {curve[0][1]:.3f} -> {curve[-1][1]:.3f} "
      f"(chance ln {k} = {np.log(k):.3f})")

metrics = eval_segmenter(model, held, pp)
print(f"held out: aAcc {metrics['aAcc']:.2f}  mAcc {metrics['mAcc']:.2f}  "
      f"mIoU {metrics['mIoU']:.2f}")

from evmem.data import preprocess_eval

sample = held[0]
pred = predict_segmenter(model, preprocess_eval(sample.stream, pp))
conf = seg_confusion(sample.class_map, pred, k)
a, m, iou = seg_metrics(conf)
print(f"one sample: aAcc {a:.2f}  mAcc {m:.2f}  mIoU {iou:.2f}")
print("rows of the confusion matrix are truth, columns prediction:")
print(conf)
