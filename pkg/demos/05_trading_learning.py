"""Optimal execution with unknown market impact, learned by exploration.

N traders liquidate inventory; the midprice moves with their average rate
(permanent impact) and each trader's execution price degrades with own
volume (temporary impact).  The planner casts the market as a mean-field
LQG game, samples trading rates from the exploratory Gaussian policy, and
alternates least-squares model learning with re-planning.
"""

from lqgmfg.trading import (MarketParams, TradingLoopConfig, rl_loop,
                            solve_finite_horizon, to_lqg)

true = MarketParams(sigma=0.1, lambda_perm=0.05, a_temp=0.05,
                    phi_urgency=0.1, psi_terminal=1.0, T=1.0, F0=10.0, q0=5.0)
init = MarketParams(sigma=0.2, lambda_perm=0.0, a_temp=0.02,
                    phi_urgency=0.1, psi_terminal=1.0, T=1.0, F0=10.0, q0=5.0)

mapping = to_lqg(true, lambda_explore=0.1)
print("state-space blocks of the planner (state (q, F - F0), control nu):")
for key in ("Q", "R", "S", "n", "H", "Pi_T", "s_T"):
    print(f"  {key:5s} = {mapping.blocks[key]}")

fh = solve_finite_horizon(mapping, steps=200)
print(f"\nequilibrium liquidation: mean inventory {true.q0} -> "
      f"{fh.xbar.values[-1][0]:.4f} at T={true.T}")

print("\nlearning loop (true lambda=0.05, a=0.05, sigma=0.1; init believes no impact):")
cfg = TradingLoopConfig(iterations=5, inner_repeats=5, n_traders=8, steps=200,
                        lambda_explore=0.1, seed=1)
trace = rl_loop(true, init, cfg)
print(f"  {'iter':>4} {'sigma^':>8} {'lambda^':>9} {'a^':>8} {'3SE(lam)':>9} "
      f"{'cost':>9} {'rows':>6}")
for r in trace.rows:
    se = 3 * r["se_lambda"] if r["se_lambda"] == r["se_lambda"] else float("nan")
    print(f"  {r['iteration']:4d} {r['sigma_hat']:8.4f} {r['lambda_hat']:9.5f} "
          f"{r['a_hat']:8.5f} {se:9.5f} {r['cost']:9.3f} {r['n_rows']:6d}")
print("\nestimates tighten toward the truth as the dataset grows; the "
      "exploration noise keeps the impact regressors identifiable")
