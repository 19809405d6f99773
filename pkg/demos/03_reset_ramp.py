# Reset stage: a fast downward flux ramp carries the ground state diabatically
# through six avoided crossings back up to level 7, while relaxation pulls it down.
# Takes about half a minute.
from fluxqudit import CircuitParams, CrossingChain, RampSchedule, evolve_reset, ramp_crossings, transition_widths
from fluxqudit.lzsm import lzsm_report

p = CircuitParams(U0=32.68, beta_L=1.28, M=955.0, x_e=0.5087)
ramp = RampSchedule(x_e0=0.5001, v_e=0.454, x_e_end=0.4913)
gamma = 22.7  # 1/ns

crossings = ramp_crossings(p, ramp.x_e0, ramp.x_e_end)
for n, c in enumerate(crossings, start=1):
    print(f"crossing {n}: levels {c.lower_level}-{c.upper_level} at x_e = {c.x_star:.6f}, gap {c.delta:.2e} K")

traj = evolve_reset(None, p, ramp, gamma)
print("final occupations:", traj.final.round(4))
print("return probability rho77 = %.3f" % traj.final[-1])

chain = CrossingChain.from_crossings(crossings, ramp.v_e, gamma, ramp.x_e0, ramp.x_e_end)
rep = lzsm_report(chain, numeric=traj.final[-1])
print("chain product %.6f, decay factor %.3f, estimate %.3f" % (rep["chain_product"], rep["decay_factor"], rep["estimate"]))

for w in transition_widths(traj):
    if abs(w.jump) > 0.1:
        print(f"switch {w.lower_level}->{w.upper_level} at {w.x_star:.6f}: 10-90% width {w.width:.1e}")
