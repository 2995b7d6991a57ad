"""
Choosing a disease ordering by bridge sampling
==============================================

Generate three diseases under the hierarchy ``[2,3,1]``, fit all six
orderings, and average the latent effects over orderings by their posterior
probabilities.  Chains are short here; the acceptance suite uses 6000
iterations.
"""

import numpy as np

from mdagar import ChainConfig, ModelSpec
from mdagar.evidence import compare_orderings, ordering_label
from mdagar.simulate import generate_three_disease, three_disease_config

cfg = three_disease_config(seed=21)
rep = generate_three_disease(cfg, (1, 2, 0))[0]
spec = ModelSpec(rep.dataset, cfg.graph)

res = compare_orderings(spec, ChainConfig(n_iter=3000, n_burnin=1000, seed=2))
for f, p in zip(res.fits, res.posterior.prob):
    e = f.estimate
    print(f"{ordering_label(f.ordering)}  log p(y) {e.log_ml:9.2f} +/- {e.mc_se:.2f}  prob {p:.3f}")
print("selected:", ordering_label(res.best_ordering))

##############################################################################
# Averaged effects stay indexed by the original disease labels.

for d, lab in enumerate(rep.dataset.disease_labels):
    r = np.corrcoef(res.bma_w[d], rep.w[d])[0, 1]
    print(f"{lab}: corr(averaged w, true w) = {r:.3f}, beta {np.round(res.bma_beta[d], 2)}")
