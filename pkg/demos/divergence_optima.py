"""Closed-form discriminator optima against a trained discriminator.

For a random discrete family the adversarial objective at the optimal
discriminator equals a divergence plus a constant; a softmax discriminator
trained by plain SGD ascent approaches the same value.
"""

import numpy as np

from adglab import divergence as dv
from adglab.trainer import fit_tabular_discriminator

rng = np.random.default_rng(0)
fam = dv.random_family(rng, 4, 6, sparsity=0.3)
closed = dv.adg_objective(fam, dv.optimal_discriminator_kld(fam))
print(f"KL divergence to pooled          {dv.kld(fam):.6f}")
print(f"objective at closed-form optimum {closed:.6f}")
print(f"kld + sum alpha ln alpha         {dv.adg_optimum(fam):.6f}")
_, hist = fit_tabular_discriminator(fam, "adg_kld", steps=1500)
for step in (0, 100, 500, len(hist) - 1):
    print(f"trained, step {step:5d}             {hist[step]:.6f}")

cfam = dv.random_conditional_family(rng, 3, 4, 6, sparsity=0.3)
print(f"\nconditional JSD                  {dv.cjsd(cfam):.6f}")
print(f"2 CJSD - ln4 sum alpha_k         {dv.cadg_jsd_optimum(cfam):.6f}")
_, hist = fit_tabular_discriminator(cfam, "cadg_jsd", steps=3000, disc_hidden=64)
print(f"trained binary discriminator     {hist[-1]:.6f}")
