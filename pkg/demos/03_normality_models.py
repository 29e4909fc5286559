"""
Normality models and the adaptive threshold
===========================================

Fit the two per-location normality models on clean feature vectors, score
an outlier against both, and derive the decision threshold from the same
data the models were fitted on.
"""

import numpy as np

from adws import (
    adaptive_threshold,
    fit_mvg,
    fit_ocsvm,
    mahalanobis,
    ocsvm_score,
    score_map,
)

# clean vectors: a correlated 8-dimensional Gaussian cloud
rng = np.random.default_rng(0)
A = rng.normal(size=(8, 8)) * 0.4
mean = rng.normal(size=8)
samples = mean + rng.normal(size=(400, 8)) @ A

# multivariate Gaussian: mean + shrunk covariance, scored by Mahalanobis
# distance (computed through a Cholesky solve, no explicit inverse)
mvg = fit_mvg(samples, shrinkage=0.01)
d_in = mahalanobis(mvg, samples[0])
d_out = mahalanobis(mvg, mean + 10 * np.ones(8) @ A)
print(f"mvg: inlier distance {d_in:.2f}, outlier distance {d_out:.2f}")

# one-class SVM with an RBF kernel; nu bounds the training-outlier rate
oc = fit_ocsvm(samples[:200], nu=0.1, gamma="auto")
s_in = ocsvm_score(oc, samples[0])
s_out = ocsvm_score(oc, mean + 10 * np.ones(8) @ A)
print(f"ocsvm: {len(oc.alphas)} support vectors, "
      f"inlier score {s_in:.3f}, outlier score {s_out:.3f}")
frac = np.mean([ocsvm_score(oc, x) > 1e-7 for x in samples[:200]])
print(f"ocsvm: fraction of training vectors scored as outliers: {frac:.3f} "
      f"(nu was 0.1)")

# per-location scoring: a feature map is scored cell by cell, and the
# image-level score is the hottest cell
grid_maps = []
for _ in range(6):
    m = (mean + rng.normal(size=(25, 8)) @ A).T.reshape(8, 5, 5)
    grid_maps.append(m.astype(np.float32))

# the threshold adapts to the selected subset: max training score plus a
# margin, so the model never flags the very images it was fitted on
thr = adaptive_threshold(mvg, grid_maps, margin=1.0)
print(f"adaptive tau over the fitted maps: {thr.tau:.3f} (margin {thr.margin})")

for m in grid_maps:
    sm = score_map(mvg, m)
    assert sm.image_score <= thr.tau
print("every fitted map scores at or below tau, as it must")

# inject a defect into one cell of a fresh map and score it
fresh = (mean + rng.normal(size=(25, 8)) @ A).T.reshape(8, 5, 5).astype(np.float32)
fresh[:, 2, 3] += 8.0
sm = score_map(mvg, fresh)
hot = np.unravel_index(np.argmax(sm.grid), sm.grid.shape)
verdict = "anomalous" if sm.image_score > thr.tau else "normal"
print(f"defective map: score {sm.image_score:.2f} vs tau {thr.tau:.2f} "
      f"-> {verdict}, hottest cell {hot}")
