# How fast must the flux ramp be so that even the widest crossing is passed diabatically?
from fluxqudit import lzsm_probability
from fluxqudit.lzsm import design_ramp_speed

for target in (0.9, 0.99, 0.999):
    d = design_ramp_speed(delta_max=3e-3, p_target=target, I_p=3e-6)
    print(f"P = {target}: v = {d.v:.3f} K/ns -> {d.dphi_dt_wb_per_s * 1e9:.3f} nWb/s = {d.dphi_dt_phi0_per_us:.3f} Phi0/us, "
          f"0.5087 -> 0.4913 in {d.speed.ramp_duration_us(0.0174):.3f} us")

# the same speed leaves narrow gaps essentially untouched
d = design_ramp_speed(3e-3, 0.99, 3e-6)
for gap in (3e-8, 1e-5, 1e-3, 3e-3, 1e-2):
    print(f"gap {gap:.0e} K: diabatic passage {lzsm_probability(gap, d.v):.6f}")
