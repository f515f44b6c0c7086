# coding: utf-8

# # What do group sparsity residuals look like?
#
# For each noisy group we have two code matrices: A from the group's own PCA
# basis and B from the selected mixture component. Their difference R = A - B
# is what the shrinkage step penalizes with an l1 norm. Here we collect R over
# a whole image and compare three zero-mean fits by log-domain histogram error.

import numpy as np
import skimage.data
from skimage.color import rgb2gray

from gsrdenoise import DenoiseParams, TrainingConfig, add_awgn, sample_training_groups, train_em
from gsrdenoise import analysis

p = DenoiseParams.for_sigma(30, K=16)
corpus = [np.asarray(getattr(skimage.data, n)(), float) for n in ("camera", "coins", "moon")]
cfg = TrainingConfig(n_groups=8000, spec=p.spec, seed=0, max_em_iters=40)
model = train_em(sample_training_groups(corpus, cfg), p.K, cfg)

clean = rgb2gray(skimage.data.coffee())[100:228, 200:328] * 255.0
sample = analysis.collect_residuals(add_awgn(clean, 30, seed=2), model, p, source="coffee")
print("residual entries:", sample.values.size)

# The Gaussian fit matches the variance but misses the sharp peak and heavy
# tails; the Laplacian is far closer.

fits = analysis.fit_all(sample)
for fam, f in fits.items():
    print("%-16s %-34s log_fit_error=%.3f" % (fam, f.params, f.log_fit_error))

centers, counts, density = analysis.histogram(sample.values)
mid = len(centers) // 2
for i in range(mid - 4, mid + 5):
    print("%8.2f  %.4f  gauss %.4f  laplace %.4f" % (
        centers[i], density[i], fits["gaussian"].pdf(centers[i]), fits["laplacian"].pdf(centers[i])))
