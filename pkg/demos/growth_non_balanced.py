"""Row sums that differ between draws: the total grows like omega * n.

For a two-colour rule without a fixed number of added balls, the ball
count per step averages to omega at the limiting composition.  We compare
T_n / n with omega and print the scalar CLT variance when it exists.
"""
from polyaurn import catalogue
from polyaurn.experiment import analyze, simulate
from polyaurn.montecarlo import total_growth_check

cfg = catalogue.get("5.2").with_overrides(n_reps=500, n_steps=20_000)
(z,) = analyze(cfg).stable
nb = z.non_balanced
print(f"theta={nb.theta:.4f} omega={nb.omega} lambda={nb.lam} sigma^2={nb.sigma2:.4f} clt={nb.clt_variance}")

g = total_growth_check(simulate(cfg), nb.omega)
print(f"T_n/n = {g.empirical:.5f} +- {g.std_error:.1e}  (omega {g.omega})")
