# Four-node tree with a shared buffer of 30.  Walk through the pieces of the
# scheme: effective gradients, the mollified subsolution, and the IS kernel.
import numpy as np

from jacksontree import build_gradient_table, choose_params, estimate, first_passage, load_config
from jacksontree.sampler import averaged_kernel, nominal_distribution

cfg = load_config("ex1")
net, buf = cfg.network, cfg.buffer
print("utilities:", np.round(net.rates.rho, 4))

table = build_gradient_table(net)
print(f"\n{len(table)} distinct effective gradients")
print(table.to_csv())

params = choose_params(net, buf, epsilon=0.25, delta=0.08)

# Near the origin the kernel pushes arrivals up and slows service at node 1.
x = np.array([3, 0, 0, 0])
nominal = nominal_distribution(net)
tilted = averaged_kernel(net, x, buf.n, table, params)
for label, p, q in zip(net.jumps.labels, nominal.probs, tilted.probs):
    print(f"  {label}: {p:.3f} -> {q:.3f}")

exact = first_passage(net, buf)
print(f"\nexact p_30 = {exact.p_exact:.4e} ({exact.states} states, {exact.iterations} sweeps)")
for seed in range(5):
    s = estimate(net, buf, K=10_000, params=params, seed=seed)
    lo, hi = s.ci95
    print(f"  seed {seed}: {s.p_hat:.3e} +- {s.std_err:.2e}  [{lo:.3e}, {hi:.3e}]")
