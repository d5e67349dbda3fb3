"""Electronic-market application: N-trader market simulator with permanent
and temporary price impact, the mapping into the mean-field LQG state-space
form, parameter estimation by least squares, and the model-based
learn-plan-act loop.

Market model per trader (inventory q, trading rate nu, midprice F,
execution price S, cash Z):

    dF = lambda_perm * nubar dt + sigma dW        (common midprice noise)
    dq = nu dt
    S  = F + a_temp * integral of own nu          (as simulated/estimated)
    dZ = -S dq

and the cost  phi/2 int q^2 dt - Z_T - q_T (F_T - psi q_T).

This is a finite-horizon problem without discounting, so the planner runs
the differential Riccati path with the terminal weight from the book-value
and liquidation penalties and rho = 0 (the general infinite-horizon
machinery is recovered as the horizon grows).  For the planner's quadratic
form the temporary impact is charged against the trading rate (execution
price F + a nu), the standard optimal-execution expansion: expanding the
cash process gives the control cost a nu^2, the cross term F nu, and the
terminal -q_T F_T; a cumulative-impact charge would leave the rate
unpenalized (a singular control problem with R = 0), which the quadratic
framework cannot represent.  The blocks produced are recorded in the
mapping for auditability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .model import PopulationSpec, SubpopParams, validate_spec
from .numerics import TimeGrid, Trajectory, rk4_linear_time_varying
from .riccati import solve_differential_riccati

__all__ = [
    "MarketParams",
    "LqgMapping",
    "TradingPolicy",
    "MarketPaths",
    "TradingDataset",
    "ParamEstimates",
    "EstimationError",
    "LearningTrace",
    "TradingLoopConfig",
    "to_lqg",
    "solve_finite_horizon",
    "trading_policy",
    "simulate_market",
    "estimate_params",
    "realized_cost",
    "rl_loop",
    "params_to_json",
    "params_from_json",
]

_SEED_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarketParams:
    sigma: float
    lambda_perm: float
    a_temp: float
    phi_urgency: float
    psi_terminal: float
    T: float
    F0: float
    q0: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        for name in ("lambda_perm", "a_temp", "phi_urgency", "psi_terminal"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def params_to_json(p: MarketParams) -> dict:
    return {"sigma": p.sigma, "lambda_perm": p.lambda_perm, "a_temp": p.a_temp,
            "phi_urgency": p.phi_urgency, "psi_terminal": p.psi_terminal,
            "T": p.T, "F0": p.F0, "q0": p.q0}


def params_from_json(doc: dict) -> MarketParams:
    return MarketParams(sigma=float(doc["sigma"]), lambda_perm=float(doc["lambda_perm"]),
                        a_temp=float(doc["a_temp"]), phi_urgency=float(doc["phi_urgency"]),
                        psi_terminal=float(doc["psi_terminal"]), T=float(doc["T"]),
                        F0=float(doc["F0"]), q0=float(doc["q0"]))


@dataclass
class LqgMapping:
    """State-space form of the trading game: state (q, F - F0), control nu."""

    population: PopulationSpec
    terminal_weight: np.ndarray    # Pi(T)
    terminal_offset: np.ndarray    # s(T)
    blocks: dict


def to_lqg(params: MarketParams, N_types: int = 1,
           lambda_explore: float = 0.0) -> LqgMapping:
    """Cast the trading problem as an LQG mean-field game.

    Per trader: state x = (q, F - F0), control nu, n = 2, m = 1.  The
    permanent impact enters as the mean-control coupling H = (0, lambda)^T;
    the urgency penalty gives Q_11 = phi; the cash expansion gives the
    control cost R = 2 a, the cross term S = (0, 1)^T against the price
    deviation, and the linear control cost n = F0; the terminal book value
    and liquidation penalty give Pi(T) = [[2 psi, -1], [-1, 0]] and
    s(T) = (-F0, 0).  rho = 0 (finite horizon).
    """
    lam, a = params.lambda_perm, params.a_temp
    sub = SubpopParams(
        A=np.zeros((2, 2)),
        B=np.array([[1.0], [0.0]]),
        H=np.array([[0.0], [lam]]),
        D=np.array([[0.0], [params.sigma]]),
        Q=np.array([[params.phi_urgency, 0.0], [0.0, 0.0]]),
        R=np.array([[2.0 * a]]),
        S=np.array([[0.0], [1.0]]),
        nvec=np.array([params.F0]),
        lambda_explore=lambda_explore,
    )
    pi = np.full(N_types, 1.0 / N_types)
    pop = PopulationSpec(subpops=(sub,) * N_types, pi=pi, rho=0.0,
                         x0_mean=np.array([params.q0, 0.0]),
                         x0_cov=np.zeros((2, 2)))
    Pi_T = np.array([[2.0 * params.psi_terminal, -1.0], [-1.0, 0.0]])
    s_T = np.array([-params.F0, 0.0])
    blocks = {
        "state": "(inventory q, midprice deviation F - F0)",
        "A": sub.A.tolist(), "B": sub.B.tolist(), "H": sub.H.tolist(),
        "D": sub.D.tolist(), "Q": sub.Q.tolist(), "R": sub.R.tolist(),
        "S": sub.S.tolist(), "n": sub.nvec.tolist(),
        "Pi_T": Pi_T.tolist(), "s_T": s_T.tolist(), "rho": 0.0, "T": params.T,
    }
    return LqgMapping(population=pop, terminal_weight=Pi_T, terminal_offset=s_T,
                      blocks=blocks)


# ---------------------------------------------------------------------------
# Finite-horizon consistency solve (time-varying gains)
# ---------------------------------------------------------------------------

@dataclass
class FiniteHorizonSolution:
    grid: TimeGrid
    Pi: list[Trajectory]           # per type, (nodes, n, n)
    s: list[Trajectory]            # per type, (nodes, n)
    xbar: Trajectory               # (nodes, nK)
    mubar: Trajectory              # (nodes, mK)
    iterations: int
    change: float


def solve_finite_horizon(mapping: LqgMapping, steps: int = 200,
                         damping: float = 0.5, tol: float = 1e-9,
                         max_iters: int = 200) -> FiniteHorizonSolution:
    """Picard iteration for the finite-horizon consistency system.

    Identical structure to the stationary solver, but the Riccati weight
    Pi_k(t) is the backward differential solution from the terminal matrix,
    so the feedback gains are time-varying.  Two validate_spec checks are
    waived here: the positive discount (rho = 0 is the finite-horizon
    setting) and Q - S R^-1 S^T >= 0, which only guarantees the
    infinite-horizon flow stays in the PSD cone -- the trading terminal
    weight is itself indefinite (the -q_T F_T book value) and boundedness
    on [0, T] is enforced at runtime by the blow-up detector instead.
    R > 0 and all structural checks remain hard errors.
    """
    spec = mapping.population
    report = validate_spec(spec)
    hard = [v for v in report.violations
            if v[0] != "discount" and "Q - S R^-1 S^T" not in v[1]]
    if hard:
        raise ValueError(f"trading spec violates model assumptions: {hard}")
    K, n, m = spec.K, spec.n, spec.m
    grid = TimeGrid(0.0, _horizon_of(mapping), steps)
    ts = grid.times()
    ts_half = np.linspace(grid.t0, grid.t1, 2 * steps + 1)
    nodes = steps + 1
    rho = spec.rho

    Pi_trajs, M_half, Acl_half, J_half, ops = [], [], [], [], []
    for k in range(K):
        p = spec.subpops[k]
        # the backward Riccati layer near T can be stiff for large terminal
        # weights; refine its grid to keep fixed-step RK4 inside stability
        gain_norm = float(np.linalg.norm(p.B @ np.linalg.solve(p.R, p.B.T), 2))
        stiff = 2.0 * float(np.linalg.norm(mapping.terminal_weight, 2)) * gain_norm \
            + 2.0 * float(np.linalg.norm(p.A, 2)) + abs(rho)
        refine = max(1, int(math.ceil(grid.t1 * stiff / steps)))
        if refine > 1 and refine % 2:
            refine += 1
        fine = TimeGrid(grid.t0, grid.t1, steps * refine)
        Pi_fine = solve_differential_riccati(p, rho, mapping.terminal_weight, fine)
        Pi_k = Trajectory(grid, Pi_fine.values[::refine])
        Pi_trajs.append(Pi_k)
        Pi_h = Pi_fine.spline()(ts_half)                     # (2s+1, n, n)
        Rinv = np.linalg.inv(p.R)
        G_h = np.einsum("ij,tjk->tik", Rinv, np.einsum("ji,tjk->tik", p.B, Pi_h)
                        + p.S.T[None, :, :])                 # R^-1 (B^T Pi + S^T)
        A_cl = p.A[None, :, :] - np.einsum("ij,tjk->tik", p.B, G_h)
        M_half.append(rho * np.eye(n)[None, :, :] - np.transpose(A_cl, (0, 2, 1)))
        Acl_half.append(A_cl)
        e_k = np.zeros((n, n * K))
        e_k[:, k * n:(k + 1) * n] = np.eye(n)
        psib = spec.psibar(k)
        Jrow = -np.einsum("tij,jk->tik", G_h, e_k) + (Rinv @ p.S.T @ psib)[None, :, :]
        J_half.append(Jrow)                                  # (2s+1, m, nK)
        ops.append({"p": p, "Rinv": Rinv, "Pi_h": Pi_h,
                    "Fb": spec.Fbar(k), "Hb": spec.Hbar(k), "psib": psib,
                    "e_k": e_k})

    J_all_half = np.concatenate(J_half, axis=1)              # (2s+1, mK, nK)
    Abar_half = np.concatenate(
        [np.einsum("tij,jk->tik", Acl_half[k], ops[k]["e_k"])
         + (ops[k]["p"].B @ ops[k]["Rinv"] @ ops[k]["p"].S.T @ ops[k]["psib"])[None, :, :]
         + ops[k]["Fb"][None, :, :]
         + np.einsum("ij,tjk->tik", ops[k]["Hb"], J_all_half)
         for k in range(K)], axis=1)

    xi_stack = np.tile(spec.x0_mean, K)
    xbar_vals = np.tile(xi_stack, (nodes, 1))
    mubar_vals = np.einsum("tij,tj->ti", J_all_half[::2], xbar_vals)

    iterations = 0
    change = np.inf
    while True:
        if iterations >= max_iters:
            raise RuntimeError(f"finite-horizon consistency did not converge "
                               f"(change {change:.3e})")
        iterations += 1
        Xh = CubicSpline(ts, xbar_vals, axis=0)(ts_half)
        Uh = CubicSpline(ts, mubar_vals, axis=0)(ts_half)

        s_trajs = []
        L_vals = np.zeros((nodes, m * K))
        for k in range(K):
            o = ops[k]
            p = o["p"]
            ybar_h = Xh @ o["psib"].T
            inner = (Xh @ o["Fb"].T + (ybar_h @ p.S @ o["Rinv"].T) @ p.B.T
                     + Uh @ o["Hb"].T - (p.B @ (o["Rinv"] @ p.nvec))[None, :]
                     + p.b(ts_half))
            g_h = (np.einsum("tij,tj->ti", o["Pi_h"], inner)
                   + ybar_h @ (p.S @ o["Rinv"] @ p.S.T - p.Q).T
                   - (p.S @ (o["Rinv"] @ p.nvec))[None, :] + p.eta[None, :])
            s_k = rk4_linear_time_varying(M_half[k], -g_h, mapping.terminal_offset,
                                          grid, direction="backward")
            s_trajs.append(s_k)
            L_vals[:, k * m:(k + 1) * m] = -(s_k.values @ p.B
                                             + p.nvec[None, :]) @ o["Rinv"].T

        L_half = CubicSpline(ts, L_vals, axis=0)(ts_half)
        mbar_half = np.zeros((2 * steps + 1, n * K))
        for k in range(K):
            o = ops[k]
            p = o["p"]
            sk_half = s_trajs[k].half_grid_values()
            Lk_half = -(sk_half @ p.B + p.nvec[None, :]) @ o["Rinv"].T
            mbar_half[:, k * n:(k + 1) * n] = (Lk_half @ p.B.T
                                               + L_half @ o["Hb"].T + p.b(ts_half))
        xbar_new = rk4_linear_time_varying(Abar_half, mbar_half, xi_stack, grid,
                                           "forward")
        mubar_new = np.einsum("tij,tj->ti", J_all_half[::2], xbar_new.values) + L_vals

        change = max(float(np.max(np.abs(xbar_new.values - xbar_vals))),
                     float(np.max(np.abs(mubar_new - mubar_vals))))
        if not np.isfinite(change):
            raise RuntimeError("finite-horizon consistency diverged")
        if change < tol:
            xbar_vals, mubar_vals = xbar_new.values, mubar_new
            break
        xbar_vals = damping * xbar_new.values + (1 - damping) * xbar_vals
        mubar_vals = damping * mubar_new + (1 - damping) * mubar_vals

    return FiniteHorizonSolution(grid=grid, Pi=Pi_trajs, s=s_trajs,
                                 xbar=Trajectory(grid, xbar_vals),
                                 mubar=Trajectory(grid, mubar_vals),
                                 iterations=iterations, change=change)


def _horizon_of(mapping: LqgMapping) -> float:
    T = float(mapping.blocks.get("T", 0.0))
    if T <= 0:
        raise ValueError("mapping carries no positive horizon T")
    return T


@dataclass
class TradingPolicy:
    """Time-varying Gaussian trading policy: mean = -gain(t) x + offset(t),
    covariance lambda_explore R^-1."""

    grid: TimeGrid
    gain: np.ndarray       # (nodes, m, n)
    offset: np.ndarray     # (nodes, m)
    cov: np.ndarray        # (m, m)

    def mean_at(self, i: int, x: np.ndarray) -> np.ndarray:
        return -(x @ self.gain[i].T) + self.offset[i][None, :]


def trading_policy(mapping: LqgMapping, fh: FiniteHorizonSolution,
                   k: int = 0) -> TradingPolicy:
    spec = mapping.population
    p = spec.subpops[k]
    grid = fh.grid
    ts = grid.times()
    Rinv = np.linalg.inv(p.R)
    Pi_nodes = fh.Pi[k].values
    gain = np.einsum("ij,tjk->tik", Rinv,
                     np.einsum("ji,tjk->tik", p.B, Pi_nodes) + p.S.T[None, :, :])
    psib = spec.psibar(k)
    xbar_t = fh.xbar.values
    inner = (fh.s[k].values @ p.B - (xbar_t @ psib.T) @ p.S + p.nvec[None, :])
    offset = -inner @ Rinv.T
    cov = p.lambda_explore * Rinv
    return TradingPolicy(grid=grid, gain=gain, offset=offset,
                         cov=0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# Market simulator and estimation
# ---------------------------------------------------------------------------

@dataclass
class MarketPaths:
    grid: TimeGrid
    F: np.ndarray          # (nodes,)
    q: np.ndarray          # (N, nodes)
    nu: np.ndarray         # (N, steps) applied trading rates
    S: np.ndarray          # (N, nodes) execution price marks
    Z: np.ndarray          # (N, nodes) cash
    cumvol: np.ndarray     # (N, nodes) integral of own nu


def simulate_market(params: MarketParams, policy: TradingPolicy, N: int,
                    grid: TimeGrid, seed: int) -> MarketPaths:
    """Euler simulation of the trading dynamics with executed (sampled)
    trading rates.

    Execution price marks S_i(t) = F(t) + a * cumulative own volume; cash
    dZ = -S dq at the left point.  Trader i draws from stream seed XOR i;
    the common midprice noise uses stream seed XOR N.
    """
    steps, dt = grid.steps, grid.dt
    sqdt = math.sqrt(dt)
    nodes = steps + 1
    if policy.grid.steps != steps or abs(policy.grid.t1 - grid.t1) > 1e-12:
        raise ValueError("policy grid does not match the simulation grid")
    z = np.empty((N, steps))
    for i in range(N):
        rng = np.random.default_rng((int(seed) ^ i) & _SEED_MASK)
        z[i] = rng.standard_normal(steps)
    xi = np.random.default_rng((int(seed) ^ N) & _SEED_MASK).standard_normal(steps)
    L = math.sqrt(max(policy.cov[0, 0], 0.0))

    F = np.empty(nodes)
    q = np.empty((N, nodes))
    nu = np.empty((N, steps))
    S = np.empty((N, nodes))
    Z = np.zeros((N, nodes))
    cumvol = np.zeros((N, nodes))
    F[0] = params.F0
    q[:, 0] = params.q0
    for i in range(steps):
        x = np.stack([q[:, i], np.full(N, F[i] - params.F0)], axis=1)
        mu = policy.mean_at(i, x)[:, 0]
        nu[:, i] = mu + L * z[:, i]
        S[:, i] = F[i] + params.a_temp * cumvol[:, i]
        Z[:, i + 1] = Z[:, i] - S[:, i] * nu[:, i] * dt
        q[:, i + 1] = q[:, i] + nu[:, i] * dt
        cumvol[:, i + 1] = cumvol[:, i] + nu[:, i] * dt
        F[i + 1] = F[i] + params.lambda_perm * nu[:, i].mean() * dt + params.sigma * sqdt * xi[i]
        if not (np.all(np.isfinite(q[:, i + 1])) and np.isfinite(F[i + 1])):
            raise RuntimeError(f"non-finite market state at t={grid.times()[i + 1]:.4g}")
    S[:, steps] = F[steps] + params.a_temp * cumvol[:, steps]
    return MarketPaths(grid=grid, F=F, q=q, nu=nu, S=S, Z=Z, cumvol=cumvol)


@dataclass
class TradingDataset:
    """Regression rows harvested from market paths.

    Market rows (one per step per episode): midprice increment against the
    average executed rate.  Execution rows (one per trader per node): price
    concession against cumulative own volume.
    """

    dF: np.ndarray = field(default_factory=lambda: np.empty(0))
    nubar_dt: np.ndarray = field(default_factory=lambda: np.empty(0))
    dt_rows: np.ndarray = field(default_factory=lambda: np.empty(0))
    concession: np.ndarray = field(default_factory=lambda: np.empty(0))
    cumvol: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_rows(self) -> int:
        return self.dF.size

    def append(self, paths: MarketPaths) -> None:
        dt = paths.grid.dt
        self.dF = np.concatenate([self.dF, np.diff(paths.F)])
        self.nubar_dt = np.concatenate([self.nubar_dt, paths.nu.mean(axis=0) * dt])
        self.dt_rows = np.concatenate([self.dt_rows, np.full(paths.grid.steps, dt)])
        conc = (paths.S - paths.F[None, :]).ravel()
        self.concession = np.concatenate([self.concession, conc])
        self.cumvol = np.concatenate([self.cumvol, paths.cumvol.ravel()])


@dataclass(frozen=True)
class ParamEstimates:
    sigma_hat: float
    lambda_hat: float
    a_hat: float
    se_lambda: float
    se_a: float


def estimate_params(dataset: TradingDataset) -> ParamEstimates:
    """Least squares through the origin (the Gaussian maximum-likelihood
    estimator for these regressions).

    lambda from dF on nubar*dt, sigma from the residual quadratic
    variation, a from the execution-price concession on cumulative own
    volume.  Degenerate regressors (all traders idle) raise
    EstimationError('lambda_perm unidentifiable').
    """
    x = dataset.nubar_dt
    yv = dataset.dF
    Sxx = float(x @ x)
    scale = float(np.mean(x * x)) if x.size else 0.0
    if x.size < 3 or Sxx <= 0 or scale < 1e-20:
        raise EstimationError("lambda_perm unidentifiable (degenerate regressor)")
    lam = float(x @ yv / Sxx)
    resid = yv - lam * x
    sigma2 = float(resid @ resid) / float(dataset.dt_rows.sum())
    sigma = math.sqrt(max(sigma2, 0.0))
    s2 = float(resid @ resid) / max(x.size - 1, 1)
    se_lambda = math.sqrt(s2 / Sxx)

    u = dataset.cumvol
    w = dataset.concession
    Suu = float(u @ u)
    if u.size < 3 or Suu <= 0:
        raise EstimationError("a_temp unidentifiable (no trading volume)")
    a = float(u @ w / Suu)
    resid_a = w - a * u
    s2a = float(resid_a @ resid_a) / max(u.size - 1, 1)
    se_a = math.sqrt(s2a / Suu)
    return ParamEstimates(sigma_hat=sigma, lambda_hat=lam, a_hat=a,
                          se_lambda=se_lambda, se_a=se_a)


def realized_cost(paths: MarketPaths, params: MarketParams) -> float:
    """Average realized trading cost across traders:
    phi/2 int q^2 dt - Z_T - q_T (F_T - psi q_T)."""
    dt = paths.grid.dt
    w = np.full(paths.grid.steps + 1, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    run = 0.5 * params.phi_urgency * (paths.q ** 2 @ w)
    qT = paths.q[:, -1]
    term = -paths.Z[:, -1] - qT * (paths.F[-1] - params.psi_terminal * qT)
    return float(np.mean(run + term))


# ---------------------------------------------------------------------------
# Model-based learning loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TradingLoopConfig:
    iterations: int = 5
    inner_repeats: int = 5       # planning/acting repeats per learning phase
    n_traders: int = 8
    steps: int = 200
    lambda_explore: float = 0.1
    seed: int = 0
    solver_steps: int | None = None  # defaults to the episode step count


@dataclass
class LearningTrace:
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> list[dict]:
        return self.rows

    def write_csv(self, path) -> None:
        cols = ["iteration", "sigma_hat", "lambda_hat", "a_hat", "se_lambda",
                "se_a", "gain_q0", "cost", "n_rows", "identifiable", "failed"]
        def fmt(v):
            if isinstance(v, bool):
                return str(int(v))
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            if isinstance(v, str):
                return v
            return f"{float(v):.12g}"
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join(fmt(row.get(c, "")) for c in cols))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def _plan(params_est: MarketParams, lambda_explore: float,
          solver_steps: int) -> tuple[TradingPolicy, float]:
    mapping = to_lqg(params_est, lambda_explore=lambda_explore)
    fh = solve_finite_horizon(mapping, steps=solver_steps)
    pol = trading_policy(mapping, fh)
    return pol, float(pol.gain[0, 0, 0])


def rl_loop(true_params: MarketParams, init_params: MarketParams,
            config: TradingLoopConfig | None = None) -> LearningTrace:
    """Model-based learning: initialize with a base policy, then alternate
    model learning (re-estimate on all collected data), planning (re-solve
    the finite-horizon consistency system), and acting (sample and execute,
    appending to the dataset).

    The simulator runs the hidden true parameters; the learner sees only
    paths.  Exploration (lambda_explore > 0) keeps the permanent-impact
    regressor identifiable; an unidentifiable estimate is flagged in the
    trace and the previous estimate is kept.  A consistency solve failure is
    recorded and halts the loop.
    """
    config = config or TradingLoopConfig()
    if config.lambda_explore < 0:
        raise ValueError("lambda_explore must be nonnegative")
    solver_steps = config.solver_steps or config.steps
    grid = TimeGrid(0.0, true_params.T, config.steps)
    trace = LearningTrace()
    dataset = TradingDataset()
    current = init_params

    def episode_seed(it: int, ep: int) -> int:
        return (config.seed + _GOLDEN * (it * 1000 + ep + 1)) & _SEED_MASK

    est = ParamEstimates(sigma_hat=init_params.sigma, lambda_hat=init_params.lambda_perm,
                         a_hat=init_params.a_temp, se_lambda=float("nan"),
                         se_a=float("nan"))
    for it in range(config.iterations + 1):
        if it > 0:
            identifiable = True
            try:
                est = estimate_params(dataset)
                current = MarketParams(
                    sigma=max(est.sigma_hat, 1e-8), lambda_perm=max(est.lambda_hat, 0.0),
                    a_temp=max(est.a_hat, 1e-10), phi_urgency=true_params.phi_urgency,
                    psi_terminal=true_params.psi_terminal, T=true_params.T,
                    F0=true_params.F0, q0=true_params.q0)
            except EstimationError:
                identifiable = False
        else:
            identifiable = True
        try:
            policy, gain_q0 = _plan(current, config.lambda_explore, solver_steps)
        except (RuntimeError, ValueError) as exc:
            trace.rows.append({"iteration": it, "failed": True, "error": str(exc),
                               "n_rows": dataset.n_rows, "identifiable": identifiable})
            return trace
        costs = []
        for ep in range(config.inner_repeats):
            paths = simulate_market(true_params, policy, config.n_traders, grid,
                                    episode_seed(it, ep))
            dataset.append(paths)
            costs.append(realized_cost(paths, true_params))
        trace.rows.append({
            "iteration": it,
            "sigma_hat": est.sigma_hat if it > 0 else init_params.sigma,
            "lambda_hat": est.lambda_hat if it > 0 else init_params.lambda_perm,
            "a_hat": est.a_hat if it > 0 else init_params.a_temp,
            "se_lambda": est.se_lambda if it > 0 else float("nan"),
            "se_a": est.se_a if it > 0 else float("nan"),
            "gain_q0": gain_q0,
            "cost": float(np.mean(costs)),
            "n_rows": dataset.n_rows,
            "identifiable": identifiable,
            "failed": False,
        })
    return trace
