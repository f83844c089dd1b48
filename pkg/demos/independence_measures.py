"""Distance correlation and HSIC on dependent vs independent samples."""
import numpy as np

from causal_mosaic import indep

rng = np.random.default_rng(0)
x = rng.laplace(size=400)
cases = {
    "independent": rng.laplace(size=400),
    "linear": 2 * x + rng.normal(size=400),
    "quadratic": x**2 + 0.5 * rng.normal(size=400),
}
print(f"{'case':<12} {'dcor':>6} {'1-dcor':>7} {'hsic p':>8}")
for name, y in cases.items():
    d = indep.dcor(x, y)
    p = indep.hsic_pvalue(x, y)
    print(f"{name:<12} {d:6.3f} {1 - d:7.3f} {p:8.4f}")

# the gamma null approximation against a seeded permutation test
y = 0.2 * x**2 + rng.normal(size=400)
print("gamma p", round(indep.hsic_pvalue(x, y), 4),
      "permutation p", round(indep.hsic_pvalue(x, y, "permutation", n_permutations=500), 4))
