# Nine localized levels of the rf-SQUID double well and how they move with flux.
import numpy as np

from fluxqudit import CircuitParams, classify_wells, solve_spectrum, sweep_flux

p = CircuitParams(U0=32.68, beta_L=1.28, M=955.0, x_e=0.5087)

# the potential first: two minima and the barrier between them
wells = classify_wells(p)
print("minima at", np.round(wells.minima, 4), "barrier at", round(wells.barrier, 4))
print("barrier height above the higher minimum: %.3f K" % wells.barrier_height)

# energies and which well each level lives in
spec = solve_spectrum(p, n_levels=9)
for k, (e, lab, m) in enumerate(zip(spec.energies, spec.localization, spec.mean_flux), start=1):
    print(f"level {k}: {e:9.5f} K  {str(lab):6s}  <x> = {m:.4f}")

# tilting back towards half flux reshuffles the ladder; count localized levels on the way
sweep = sweep_flux(p, (0.4913, 0.5087), 13, workers=1)
for x, n in zip(sweep.values, sweep.localized_counts()):
    print(f"x_e = {x:.5f}: {n} localized levels")
