# Five nodes, each with its own buffer (sizes 15, 15, 17, 18, 19).  The input
# rates sum to 1.05, so loading rescales them.
import warnings

import numpy as np

from jacksontree import build_gradient_table, choose_params, decay_rate, estimate, first_passage, load_config

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    cfg = load_config("five_node")
net, buf = cfg.network, cfg.buffer

print("buffer sizes:", buf.sizes.tolist())
print("beta * (-log rho):", np.round(-buf.beta_float * np.log(net.rates.rho), 4))
print("decay rate:", decay_rate(net, buf))
print("gradients:", len(build_gradient_table(net)))

# 1.75 million lattice states; Gauss-Seidel takes about half a minute.
ex = first_passage(net, buf)
print(f"exact p_19 = {ex.p_exact:.4e}")

params = choose_params(net, buf, epsilon=0.3, delta=0.1)
for seed in range(5):
    s = estimate(net, buf, K=10_000, params=params, seed=seed)
    print(f"  seed {seed}: {s.p_hat:.3e} +- {s.std_err:.2e}")
