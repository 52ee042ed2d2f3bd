"""Power of BF7 and LM against b2*b3 = delta.

Data are generated with b2 scaled by delta; the null b2*b3 = 1 is false
whenever delta != 1.  The curves are printed as a text plot.

    python demos/04_power_curve.py [replications]
"""

import sys

from ee_testkit import SCENARIOS, ScenarioConfig, run_power_experiment

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = ScenarioConfig(beta0=SCENARIOS["IV"], n=100, replications=reps,
                     hypothesis="h0b", statistics=("BF7", "LM"))
results = run_power_experiment(cfg, [0.4, 0.6, 0.8, 0.9, 1.0, 1.1, 1.2, 1.4, 1.6])

width = 50
print(f"scenario IV, n = 100, {reps} replications   (* = BF7, o = LM)\n")
for r in results:
    bf, lm = r.rate("BF7", "h0b"), r.rate("LM", "h0b")
    line = [" "] * (width + 1)
    line[round(lm * width)] = "o"
    line[round(bf * width)] = "*" if line[round(bf * width)] == " " else "@"
    print(f"delta {r.config.delta:4.2f} |{''.join(line)}| BF7 {bf:.3f}  LM {lm:.3f}")
