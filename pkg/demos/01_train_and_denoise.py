# coding: utf-8

# # Training a group prior and denoising a crop
#
# A small walk through the library: learn a zero-mean GMM over patch groups
# from a few clean images, add Gaussian noise to an unseen crop, and denoise it.
# Needs scikit-image for the sample images (`pip install .[test]`).

import time

import numpy as np
import skimage.data
from skimage.color import rgb2gray

from gsrdenoise import DenoiseParams, TrainingConfig, add_awgn, denoise, psnr
from gsrdenoise import sample_training_groups, train_em


def gray(name):
    img = getattr(skimage.data, name)()
    if img.ndim == 3:
        img = rgb2gray(img) * 255.0
    return np.asarray(img, dtype=np.float64)


# ## Parameters
#
# `for_sigma` looks up the built-in schedule for a noise level. We shrink K to
# keep training quick; everything else follows the sigma=30 row.

p = DenoiseParams.for_sigma(30, K=16)
print(p)

# ## Training
#
# Groups are sampled at random reference positions, matched inside the search
# window and mean-subtracted before EM.

corpus = [gray(n) for n in ("camera", "coins", "chelsea", "moon")]
cfg = TrainingConfig(n_groups=20000, spec=p.spec, seed=0)
t0 = time.perf_counter()
groups = sample_training_groups(corpus, cfg)
result = train_em(groups, p.K, cfg, return_history=True)
model = result.model
print("EM iterations:", len(result.log_likelihood), "converged:", result.converged)
print("mixture weights:", np.round(model.weights, 3))
print("trained in %.1fs" % (time.perf_counter() - t0))

# ## Denoising

clean = gray("astronaut")[0:128, 180:308]
noisy = add_awgn(clean, 30, seed=1)


def show(state):
    print("iter %d  sigma_t=%6.2f  psnr=%.2f" % (state.t, state.sigma_t, psnr(clean, state.x_hat)))


out = denoise(noisy, model, p, callback=show)
print("noisy %.2f dB -> denoised %.2f dB" % (psnr(clean, noisy), psnr(clean, out)))
