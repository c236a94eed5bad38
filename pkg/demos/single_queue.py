# A single M/M/1 queue: the one case with a closed form.  Compare the exact
# lattice solver, plain Monte Carlo and importance sampling as n grows.
import math

from jacksontree import SharedBuffer, TreeNetwork, choose_params, estimate, first_passage
from jacksontree.exact import gamblers_ruin

net = TreeNetwork.from_rates(0.3, {(1, 0): 0.7})

print(f"{'n':>4} {'closed form':>12} {'exact':>12} {'naive':>12} {'IS':>12} {'IS rel.err':>10}")
for n in (5, 10, 20, 40):
    buf = SharedBuffer(n)
    closed = gamblers_ruin(0.3, 0.7, n)
    ex = first_passage(net, buf).p_exact
    naive = estimate(net, buf, K=10_000, policy="naive", seed=1)
    tilted = estimate(net, buf, K=10_000, params=choose_params(net, buf, C=2.4), seed=1)
    print(f"{n:4d} {closed:12.4e} {ex:12.4e} {naive.p_hat:12.4e} {tilted.p_hat:12.4e} "
          f"{tilted.rel_err:10.3f}")

# Naive MC runs out of hits around n=20 while the IS relative error stays flat.
# The decay rate of p_n is log(7/3):
print("gamma =", math.log(7 / 3))
