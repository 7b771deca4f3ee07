"""Fit all six families to synthetic image-like tensors and rank them by BIC.

The data are 6 x 6 x 3 "images" drawn from a tensor NIG law with smooth
row/column correlations and positive skewness.  Skewed fits converge
slowly from the moment start; at 400 cycles they are not converged and
their order can shuffle (GH often edges out NIG here).  The 8 x 8 x 3
check in the test suite uses N=200 and 3000 cycles, where NIG ranks first.
Run: python demos/02_fit_and_select.py
"""

import numpy as np

from skewtensor.distributions import sample
from skewtensor.ecm import FitConfig, fit
from skewtensor.family import Family
from skewtensor.simulate import image_like_truth, relative_error_kron

rng = np.random.default_rng(0)
truth = image_like_truth(6, 6, rng)
x = sample(truth, 150, rng)

results = {}
for fam in Family:
    res = fit(x, fam, FitConfig(max_iter=400))
    results[fam.value] = res
    print(f"{fam.value:>6}: loglik {res.loglik:12.2f}  bic {res.bic:12.2f}  cycles {res.iterations:4d}  {res.stop_reason}")

best = min(results, key=lambda k: results[k].bic)
print("lowest BIC:", best)
print("rel. error of kron(Delta) for the NIG fit:",
      relative_error_kron(list(results["nig"].params.scales), list(truth.scales)))
