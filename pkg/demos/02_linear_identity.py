"""In a linear model BF7 coincides with the distance statistic.

Both equal (SSR_restricted - SSR_unrestricted) / s^2, the numerator of the
classical F test, so the identity can be checked against plain OLS.

    python demos/02_linear_identity.py
"""

import numpy as np

from ee_testkit import Dataset, NlsObjective, TestConfig, linear_restriction, run_all_tests

rng = np.random.default_rng(7)
n = 80
X = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
y = X @ np.array([1.0, 0.5, 0.5, -0.2]) + rng.standard_normal(n)

# b1 = b2 and b3 = 0
R = np.array([[0.0, 1.0, -1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
res = {s.name: s for s in run_all_tests(NlsObjective(Dataset(y, X), "linear"),
                                         linear_restriction(R), config=TestConfig())}

b_u = np.linalg.lstsq(X, y, rcond=None)[0]
XtXi = np.linalg.inv(X.T @ X)
b_r = b_u - XtXi @ R.T @ np.linalg.solve(R @ XtXi @ R.T, R @ b_u)
ssr_u, ssr_r = np.sum((y - X @ b_u) ** 2), np.sum((y - X @ b_r) ** 2)
classical = (ssr_r - ssr_u) / (ssr_u / (n - X.shape[1]))

for name in ("BF1", "BF4", "BF7", "W", "LM", "D"):
    print(f"{name:<4} {res[name].value:.10f}")
print(f"(SSR_r - SSR_u) / s^2 = {classical:.10f}")
print(f"relative gap BF7 vs closed form: {abs(res['BF7'].value - classical) / classical:.1e}")
