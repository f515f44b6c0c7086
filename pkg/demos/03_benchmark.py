# coding: utf-8

# # A small PSNR benchmark
#
# `bench_images` adds noise with a seed derived from (seed, image index, sigma),
# denoises each cell and reports per-image and average PSNR. The CLI `bench`
# command does the same over a directory of PGM files.

import numpy as np
import skimage.data
from skimage.color import rgb2gray

from gsrdenoise import TrainingConfig, sample_training_groups, train_em
from gsrdenoise.analysis import bench_images
from gsrdenoise.denoiser import DenoiseParams

# One model on 7x7 patches is reused for every sigma; the patch size follows
# the model while the other settings follow each sigma's schedule row.

p = DenoiseParams.for_sigma(30, K=8)
corpus = [np.asarray(getattr(skimage.data, n)(), float) for n in ("camera", "coins", "moon")]
cfg = TrainingConfig(n_groups=5000, spec=p.spec, seed=0, max_em_iters=30)
model = train_em(sample_training_groups(corpus, cfg), p.K, cfg)

images = [
    ("astronaut", rgb2gray(skimage.data.astronaut())[0:96, 180:276] * 255.0),
    ("clock", np.asarray(skimage.data.clock(), float)[50:146, 100:196]),
]
result = bench_images(images, model, sigmas=[20, 40], seed=0, iters=3)
print(result.to_csv())
