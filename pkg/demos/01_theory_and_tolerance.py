"""CGLMP values of ideal states and their white-noise tolerance for d = 2..8.

Run: python3 demos/01_theory_and_tolerance.py
"""

from jsibell.bell import binarised_reference, binned_cglmp, noise_tolerance, optimize_state, theoretical_cglmp
from jsibell.core import Scenario

print(f"{'d':>2} {'I_max_ent':>10} {'I_optimal':>10} {'tolerance':>10} {'binarised':>10} {'I_binned(M=4)':>14}")
for d in range(2, 9):
    I_max = theoretical_cglmp(d)
    lam, I_opt = optimize_state(d)
    ref = binarised_reference(d)["binarised"]
    print(
        f"{d:>2} {I_max:10.6f} {I_opt:10.6f} {noise_tolerance(I_opt).fraction:10.4f} "
        f"{'' if ref is None else f'{ref:.4f}':>10} {binned_cglmp(Scenario(d, 4)):14.6f}"
    )

lam, _ = optimize_state(8)
print("optimal Schmidt coefficients, d=8:", " ".join(f"{v:.4f}" for v in lam.lam))
print("binarised column:", binarised_reference(8)["source"])
