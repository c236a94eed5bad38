# Empirical decay rates.  With a good change of measure the second moment
# decays about twice as fast as the probability itself.
import math

from jacksontree import decay_diagnostics, load_config

cfg = load_config("ex1")
rows = decay_diagnostics(cfg.network, cfg.buffer, [10, 20, 30, 40], K=10_000, seed=0, C=2.4)
print(f"{'n':>4} {'p_hat':>11} {'rate1':>8} {'rate2':>8} {'ratio':>6}")
for r in rows:
    print(f"{r.n:4d} {r.p_hat:11.3e} {r.rate1:8.4f} {r.rate2:8.4f} {r.ratio:6.3f}")
print(f"log 6 = {math.log(6):.4f}")
