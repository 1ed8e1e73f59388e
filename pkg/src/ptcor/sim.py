"""Time-varying closed loop: gain schedule, observers, controllers, integrator.

The prescribed-time gain

    mu(t) = 1 / (T + t0 - t)   on [t0, T + t0),    mu(t) = a   afterwards

blows up as t approaches the horizon.  Numerically, mu is capped at
``mu_cap`` and the integration clamps its last pre-horizon step to
``T + t0 - 1/mu_cap`` before switching to the constant branch; the capped
trajectory coincides with the exact one up to O(1/mu_cap) because all
mu-weighted signals stay bounded for admissible gains.

Integration coordinates.  For the prescribed-time modes the loop is
integrated in regulation-error coordinates (v0, v_i - v0, x_i - X_i v0,
xhat_i - x_i), in which the closed loop is linear time-varying,
``y' = (M0 + mu(t) M1) y``.  Given the regulator equations this form is
algebraically identical to the plant coordinates, and it keeps the
terminal-phase signals well scaled: near the horizon the physical states
agree to machine precision while the errors span many decades, so
differencing O(1) states there would drown the recorded signals in
rounding noise.  The plant-coordinate right-hand sides are exposed as
`rhs_state_fb` / `rhs_output_fb` and cross-checked against the error form
in the test suite.  Baseline controllers carry no singular gain and are
integrated in plant coordinates directly.

The stepper is classic explicit RK4 with the pre-horizon step size shrunk
proportionally to 1/mu: ``dt_eff = min(dt, guard/mu)``.  That keeps the
stiffest closed-loop eigenvalue times the step bounded by ``guard`` times
a gain-dependent constant, inside the RK4 stability region for the
default guard.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .graph import Network, partition_laplacian
from .plant import Exosystem
from .synthesis import GainSet

ESCAPE_NORM = 1e9

MODES = ("state_fb", "output_fb", "baseline_asymptotic", "baseline_fixed_time")
PTCOR_MODES = ("state_fb", "output_fb")
BASELINE_KINDS = ("asymptotic", "fixed_time")

CSV_FIXED_COLUMNS = [
    "t", "mu", "||e||", "||v_tilde||", "||x_bar||", "||x_tilde||", "||u_tilde||",
    "phi1", "phi2", "phi3", "phi4",
]


@dataclass(frozen=True)
class MuSchedule:
    """Prescribed-time gain schedule with horizon T, start t0, and numeric cap."""

    T: float
    t0: float = 0.0
    a: float | None = None
    mu_cap: float = 1e6

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.a is None:
            object.__setattr__(self, "a", 1.0 / self.T)
        if self.a <= 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if self.mu_cap < max(self.a, 1.0 / self.T):
            raise ValueError(f"mu_cap {self.mu_cap} must be >= max(a, 1/T)")

    @property
    def horizon(self) -> float:
        return self.T + self.t0

    @property
    def eps(self) -> float:
        """Width of the clamped window before the horizon."""
        return 1.0 / self.mu_cap


def mu(s: MuSchedule, t) -> float | np.ndarray:
    """Evaluate the capped gain schedule; never returns NaN or infinity."""
    if isinstance(t, (int, float)):
        if t < s.t0 - 1e-12:
            raise ValueError(f"mu is undefined before t0 = {s.t0}")
        if t >= s.horizon:
            return s.a
        rem = s.horizon - t
        return s.mu_cap if rem <= s.eps else 1.0 / rem
    tt = np.asarray(t, dtype=float)
    if np.any(tt < s.t0 - 1e-12):
        raise ValueError(f"mu is undefined before t0 = {s.t0}")
    rem = s.horizon - tt
    safe = np.maximum(rem, s.eps)
    pre = np.minimum(1.0 / safe, s.mu_cap)
    out = np.where(tt < s.horizon, pre, s.a)
    return out if tt.ndim else float(out)


def kappa(s: MuSchedule, t) -> float | np.ndarray:
    """Normalized remaining time (T + t0 - t)/T, zero after the horizon."""
    scalar = np.isscalar(t) or np.asarray(t).ndim == 0
    tt = np.asarray(t, dtype=float)
    out = np.clip((s.horizon - tt) / s.T, 0.0, None)
    return float(out) if scalar else out


@dataclass
class BaselineConstants:
    c1: float = 5.0
    c2: float = 5.0
    c3: float = 5.0
    c4: float = 1.1


@dataclass
class SimConfig:
    """Step control, horizon, sampling, and mode for one run."""

    mode: str = "output_fb"
    dt: float = 1e-4
    min_dt: float = 1e-12
    guard: float = 0.1
    duration: float = 5.0
    stride: int = 10
    baseline: BaselineConstants = field(default_factory=BaselineConstants)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (0 < self.min_dt <= self.dt):
            raise ValueError(f"need 0 < min_dt <= dt, got min_dt={self.min_dt}, dt={self.dt}")
        if self.guard <= 0:
            raise ValueError(f"guard must be positive, got {self.guard}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


def sig(z, c: float) -> np.ndarray:
    """Elementwise signed power sign(z) |z|^c used by the fixed-time baseline."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.abs(z) ** c


def _split_by_dims(flat: np.ndarray, dims: list) -> list:
    out, start = [], 0
    for d in dims:
        out.append(flat[start:start + d].copy())
        start += d
    return out


@dataclass(eq=False)
class ClosedLoopState:
    """Plant-coordinate snapshot: leader state, observer states, plant states.

    `xhat` is None in state-feedback configurations.
    """

    v0: np.ndarray
    v: np.ndarray          # (N, q)
    x: list                # N vectors, agent i of length n_i
    xhat: list | None = None


@dataclass(eq=False)
class Trajectory:
    """Sampled closed-loop states and the signals derived from them.

    `states` holds plant-coordinate snapshots, one per sample; every other
    column is recomputed from the state at recording time, never integrated
    separately.  Columns that do not exist in a mode (x_tilde and phi3/phi4
    under state feedback, every phi for baselines) are None and serialize
    as empty CSV fields.  CSV round-trips carry the derived columns only,
    so `states` is None on a loaded trajectory.
    """

    mode: str
    t: np.ndarray
    mu: np.ndarray
    e: np.ndarray                       # (S, sum p_i)
    e_norm: np.ndarray
    v_tilde_norm: np.ndarray
    x_bar_norm: np.ndarray
    x_tilde_norm: np.ndarray | None
    u_tilde_norm: np.ndarray
    phi: dict                           # {1..4: ndarray or None}
    output_dims: list                   # p_i per agent, for column labels
    states: list | None = None          # ClosedLoopState per sample
    finite_escape: bool = False
    escape_time: float | None = None
    diagnostic: str = ""

    def __post_init__(self):
        if len(self.t) > 1 and not (np.diff(self.t) > 0).all():
            raise ValueError("sample times must be strictly increasing")

    def index_at(self, at: float, tol: float) -> int:
        i = int(np.argmin(np.abs(self.t - at)))
        if abs(self.t[i] - at) > tol:
            raise ValueError(
                f"no sample within {tol:.3g}s of t={at:.6g} "
                f"(range [{self.t[0]:.6g}, {self.t[-1]:.6g}])"
            )
        return i

    def e_columns(self) -> list:
        names = []
        for i, p in enumerate(self.output_dims, start=1):
            names.extend(f"e_{i}_{j}" for j in range(1, p + 1))
        return names

    def to_csv(self, path) -> None:
        cols = CSV_FIXED_COLUMNS + self.e_columns()
        phi_arrays = [self.phi.get(k) for k in (1, 2, 3, 4)]

        def cell(value) -> str:
            return "" if value is None else f"{value:.15g}"

        with open(path, "w", encoding="utf-8") as fh:
            fh.write(", ".join(cols) + "\n")
            for s in range(len(self.t)):
                row = [
                    cell(self.t[s]), cell(self.mu[s]), cell(self.e_norm[s]),
                    cell(self.v_tilde_norm[s]), cell(self.x_bar_norm[s]),
                    cell(None if self.x_tilde_norm is None else self.x_tilde_norm[s]),
                    cell(self.u_tilde_norm[s]),
                ]
                row += [cell(None if arr is None else arr[s]) for arr in phi_arrays]
                row += [cell(v) for v in self.e[s]]
                fh.write(", ".join(row) + "\n")

    @classmethod
    def from_csv(cls, path, mode: str = "unknown") -> "Trajectory":
        with open(path, "r", encoding="utf-8") as fh:
            header = [h.strip() for h in fh.readline().split(",")]
            rows = [[c.strip() for c in line.split(",")] for line in fh if line.strip()]
        if header[: len(CSV_FIXED_COLUMNS)] != CSV_FIXED_COLUMNS:
            raise ValueError(f"unrecognized trajectory header: {header[:11]}")
        e_names = header[len(CSV_FIXED_COLUMNS):]
        dims: list[int] = []
        for name in e_names:
            parts = name.split("_")
            agent = int(parts[1])
            while len(dims) < agent:
                dims.append(0)
            dims[agent - 1] += 1

        def column(idx: int) -> np.ndarray | None:
            vals = [r[idx] for r in rows]
            if all(v == "" for v in vals):
                return None
            return np.array([float(v) for v in vals])

        ncol = len(header)
        data = [column(i) for i in range(ncol)]
        e = np.column_stack([data[i] for i in range(len(CSV_FIXED_COLUMNS), ncol)]) \
            if rows else np.zeros((0, len(e_names)))
        return cls(
            mode=mode, t=data[0], mu=data[1], e=e, e_norm=data[2],
            v_tilde_norm=data[3], x_bar_norm=data[4], x_tilde_norm=data[5],
            u_tilde_norm=data[6],
            phi={k: data[6 + k] for k in (1, 2, 3, 4)},
            output_dims=dims,
        )


class ClosedLoopModel:
    """Lumped block-matrix form of one scenario's closed loop.

    Assembles the stacked plant/gain matrices once so both the literal
    per-agent right-hand sides and the fast integrator share one source of
    model data.
    """

    def __init__(self, network: Network, agents: list, exo: Exosystem,
                 gains: GainSet, regs: list, schedule: MuSchedule):
        N = network.n_followers
        if len(agents) != N or len(regs) != N or gains.n_agents != N:
            raise ValueError("agents, gains, and regulator solutions must match the follower count")
        q = exo.q
        for i, a in enumerate(agents):
            if a.q != q:
                raise ValueError(f"agents[{i}] has exosystem dimension {a.q}, expected {q}")
        self.network = network
        self.agents = agents
        self.exo = exo
        self.gains = gains
        self.regs = regs
        self.schedule = schedule
        self.N, self.q = N, q
        self.n_i = [a.n for a in agents]
        self.p_i = [a.p for a in agents]
        self.nx = sum(self.n_i)
        self.H = partition_laplacian(network).H
        self.Hq = np.kron(self.H, np.eye(q))

        bd = scipy.linalg.block_diag
        self.A_blk = bd(*[a.A for a in agents])
        self.B_blk = bd(*[a.B for a in agents])
        self.C_blk = bd(*[a.C for a in agents])
        self.D_blk = bd(*[a.D for a in agents])
        self.Cm_blk = bd(*[a.Cm for a in agents])
        self.Dm_blk = bd(*[a.Dm for a in agents])
        self.E_blk = bd(*[a.E for a in agents])          # acts on stacked per-agent v
        self.Fm_blk = bd(*[a.Fm for a in agents])
        self.E_stack = np.vstack([a.E for a in agents])  # acts on v0
        self.F_stack = np.vstack([a.F for a in agents])
        self.Fm_stack = np.vstack([a.Fm for a in agents])
        self.X_blk = bd(*[r.X for r in regs])
        self.X_stack = np.vstack([r.X for r in regs])
        self.U_stack = np.vstack([r.U for r in regs])
        self.Kbar_blk = bd(*gains.Kbar)
        self.Ktil_blk = bd(*gains.Ktil)
        self.K_blk = bd(*gains.K)
        self.S0_blk = np.kron(np.eye(N), exo.S0)
        if gains.L is not None and gains.Ltil is not None:
            self.L_blk = bd(*gains.L)
            self.Ltil_blk = bd(*gains.Ltil)
        else:
            self.L_blk = self.Ltil_blk = None

    # -- plant-coordinate helpers -------------------------------------------------

    def split_state(self, state: ClosedLoopState):
        return (np.asarray(state.v0, dtype=float),
                np.asarray(state.v, dtype=float),
                [np.asarray(xi, dtype=float) for xi in state.x],
                None if state.xhat is None else [np.asarray(h, dtype=float) for h in state.xhat])

    def consensus_terms(self, v0: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Per-agent neighbourhood disagreement sum_j a_ij (v_j - v_i), leader included."""
        A = self.network.adjacency
        out = np.zeros_like(v)
        for i in range(1, self.N + 1):
            acc = np.zeros(self.q)
            for j in range(self.N + 1):
                w = A[i, j]
                if w > 0:
                    vj = v0 if j == 0 else v[j - 1]
                    acc += w * (vj - v[i - 1])
            out[i - 1] = acc
        return out


def compile_model(scenario) -> ClosedLoopModel:
    """Solve the regulator equations, materialize gains, and assemble the blocks."""
    from .plant import solve_regulator
    from .synthesis import build_gain_set

    regs = [solve_regulator(a, scenario.exo) for a in scenario.agents]
    gains = build_gain_set(scenario.gain_spec, scenario.agents, regs)
    return ClosedLoopModel(scenario.network, scenario.agents, scenario.exo,
                           gains, regs, scenario.mu_schedule)


# -- literal right-hand sides (plant coordinates) ----------------------------------


def _check_finite(arrs, t: float) -> None:
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite derivative at t = {t:.9g}; integration aborted")


def rhs_state_fb(state: ClosedLoopState, t: float, model: ClosedLoopModel) -> ClosedLoopState:
    """Distributed observer plus state-feedback controller, written per agent."""
    v0, v, x, _ = model.split_state(state)
    m = mu(model.schedule, t)
    g = model.gains
    dv0 = model.exo.S0 @ v0
    dv = model.exo.S0 @ v.T
    dv = dv.T + g.psi * m * model.consensus_terms(v0, v)
    dx = []
    for i, agent in enumerate(model.agents):
        u_i = g.Kbar[i] @ x[i] + g.Ktil[i] @ v[i] + m * (g.K[i] @ (x[i] - model.regs[i].X @ v[i]))
        dx.append(agent.A @ x[i] + agent.B @ u_i + agent.E @ v0)
    _check_finite([dv0, dv] + dx, t)
    return ClosedLoopState(v0=dv0, v=dv, x=dx, xhat=None)


def rhs_output_fb(state: ClosedLoopState, t: float, model: ClosedLoopModel) -> ClosedLoopState:
    """Distributed observer, local observers, and measurement-feedback controller.

    The feedthrough Dm u appears in both the measurement and the observer
    reconstruction, so it cancels from the innovation; u is computed first
    from the observer state and substituted, no implicit solve is needed.
    """
    if model.L_blk is None:
        raise ValueError("model has no output-injection gains; synth L/Ltil first")
    v0, v, x, xhat = model.split_state(state)
    if xhat is None:
        raise ValueError("output-feedback mode needs observer states xhat")
    m = mu(model.schedule, t)
    g = model.gains
    dv0 = model.exo.S0 @ v0
    dv = (model.exo.S0 @ v.T).T + g.psi * m * model.consensus_terms(v0, v)
    dx, dxh = [], []
    for i, agent in enumerate(model.agents):
        u_i = g.Kbar[i] @ xhat[i] + g.Ktil[i] @ v[i] + m * (g.K[i] @ (xhat[i] - model.regs[i].X @ v[i]))
        y_i = agent.Cm @ x[i] + agent.Dm @ u_i + agent.Fm @ v0
        innovation = y_i - agent.Cm @ xhat[i] - agent.Dm @ u_i - agent.Fm @ v[i]
        dx.append(agent.A @ x[i] + agent.B @ u_i + agent.E @ v0)
        dxh.append(agent.A @ xhat[i] + agent.B @ u_i + agent.E @ v[i]
                   + (g.L[i] + m * g.Ltil[i]) @ innovation)
    _check_finite([dv0, dv] + dx + dxh, t)
    return ClosedLoopState(v0=dv0, v=dv, x=dx, xhat=dxh)


def rhs_baseline(state: ClosedLoopState, t: float, model: ClosedLoopModel, kind: str,
                 constants: BaselineConstants | None = None) -> ClosedLoopState:
    """Asymptotic or fixed-time comparison controller, written per agent.

    The fixed-time law replaces the mu-weighted corrections with sign and
    signed-power terms on the same error quantities; its relay terms are
    integrated as-is, without chattering mitigation.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"kind must be one of {BASELINE_KINDS}, got {kind!r}")
    if model.L_blk is None:
        raise ValueError("baselines use the local observer; synth L/Ltil first")
    c = constants or BaselineConstants()
    v0, v, x, xhat = model.split_state(state)
    g = model.gains
    dv0 = model.exo.S0 @ v0
    chi = model.consensus_terms(v0, v)
    dv = (model.exo.S0 @ v.T).T
    if kind == "asymptotic":
        dv = dv + g.psi * chi
    else:
        dv = dv + c.c1 * chi + c.c2 * np.sign(chi) + c.c3 * sig(chi, c.c4)
    dx, dxh = [], []
    for i, agent in enumerate(model.agents):
        if kind == "asymptotic":
            u_i = g.Kbar[i] @ xhat[i] + g.Ktil[i] @ v[i]
        else:
            track = xhat[i] - model.regs[i].X @ v[i]
            u_i = (g.Kbar[i] @ xhat[i] + g.Ktil[i] @ v[i]
                   + g.K[i] @ np.sign(track) + g.K[i] @ sig(track, c.c4))
        y_i = agent.Cm @ x[i] + agent.Dm @ u_i + agent.Fm @ v0
        innovation = y_i - agent.Cm @ xhat[i] - agent.Dm @ u_i - agent.Fm @ v[i]
        obs = agent.A @ xhat[i] + agent.B @ u_i + agent.E @ v[i] + g.L[i] @ innovation
        if kind == "fixed_time":
            obs = obs + g.Ltil[i] @ np.sign(innovation) + g.Ltil[i] @ sig(innovation, c.c4)
        dxh.append(obs)
        dx.append(agent.A @ x[i] + agent.B @ u_i + agent.E @ v0)
    _check_finite([dv0, dv] + dx + dxh, t)
    return ClosedLoopState(v0=dv0, v=dv, x=dx, xhat=dxh)


# -- fast integration paths --------------------------------------------------------


class _PtcorSystem:
    """Error-coordinate LTV form y' = (M0 + mu M1) y with output maps."""

    def __init__(self, model: ClosedLoopModel, output_fb: bool):
        self.model = model
        self.output_fb = output_fb
        N, q, nx = model.N, model.q, model.nx
        dim = q + N * q + nx + (nx if output_fb else 0)
        self.dim = dim
        self.s_v0 = slice(0, q)
        self.s_vt = slice(q, q + N * q)
        self.s_xb = slice(q + N * q, q + N * q + nx)
        self.s_xt = slice(q + N * q + nx, dim) if output_fb else None

        g = model.gains
        BK = model.B_blk @ model.K_blk
        BKbar = model.B_blk @ model.Kbar_blk
        BKtil = model.B_blk @ model.Ktil_blk
        Ac = model.A_blk + BKbar
        DK = model.D_blk @ model.K_blk
        Cc = model.C_blk + model.D_blk @ model.Kbar_blk

        M0 = np.zeros((dim, dim))
        M1 = np.zeros((dim, dim))
        M0[self.s_v0, self.s_v0] = model.exo.S0
        M0[self.s_vt, self.s_vt] = model.S0_blk
        M1[self.s_vt, self.s_vt] = -g.psi * model.Hq
        M0[self.s_xb, self.s_xb] = Ac
        M0[self.s_xb, self.s_vt] = BKtil
        M1[self.s_xb, self.s_xb] = BK
        M1[self.s_xb, self.s_vt] = -BK @ model.X_blk
        if output_fb:
            LCm = model.L_blk @ model.Cm_blk
            LtCm = model.Ltil_blk @ model.Cm_blk
            M0[self.s_xt, self.s_xt] = model.A_blk - LCm
            M0[self.s_xt, self.s_vt] = model.E_blk - model.L_blk @ model.Fm_blk
            M1[self.s_xt, self.s_xt] = -LtCm
            M1[self.s_xt, self.s_vt] = -model.Ltil_blk @ model.Fm_blk
            M0[self.s_xb, self.s_xt] = BKbar
            M1[self.s_xb, self.s_xt] = BK
        self.M0, self.M1 = M0, M1

        # Output maps: value = row0 @ y + mu * row1 @ y.
        P = sum(model.p_i)
        self.e0 = np.zeros((P, dim))
        self.e1 = np.zeros((P, dim))
        self.e0[:, self.s_xb] = Cc
        self.e0[:, self.s_vt] = model.D_blk @ model.Ktil_blk
        self.e1[:, self.s_xb] = DK
        self.e1[:, self.s_vt] = -DK @ model.X_blk
        mt = sum(a.m for a in model.agents)
        self.u0 = np.zeros((mt, dim))
        self.u1 = np.zeros((mt, dim))
        self.u0[:, self.s_xb] = model.Kbar_blk
        self.u0[:, self.s_vt] = model.Ktil_blk
        self.u1[:, self.s_xb] = model.K_blk
        self.u1[:, self.s_vt] = -model.K_blk @ model.X_blk
        if output_fb:
            self.e0[:, self.s_xt] = model.D_blk @ model.Kbar_blk
            self.e1[:, self.s_xt] = DK
            self.u0[:, self.s_xt] = model.Kbar_blk
            self.u1[:, self.s_xt] = model.K_blk
        self.phi1_map = np.zeros((N * q, dim))
        self.phi1_map[:, self.s_vt] = model.Hq
        ex = np.zeros((nx, dim))
        ex[:, self.s_xb] = np.eye(nx)
        ex[:, self.s_vt] = -model.X_blk
        if output_fb:
            exh = ex.copy()
            exh[:, self.s_xt] = np.eye(nx)
            self.phi4_map = exh
            self.phi3_map = np.zeros((sum(a.pm for a in model.agents), dim))
            self.phi3_map[:, self.s_xt] = -model.Cm_blk
            self.phi3_map[:, self.s_vt] = -model.Fm_blk
            self.phi2_map = None
        else:
            self.phi2_map = ex
            self.phi3_map = self.phi4_map = None

    def initial_state(self, v0_init, v_init, x_init, xhat_init) -> np.ndarray:
        m = self.model
        y = np.zeros(self.dim)
        v0 = np.asarray(v0_init, dtype=float)
        y[self.s_v0] = v0
        v = np.asarray(v_init, dtype=float).reshape(m.N, m.q)
        y[self.s_vt] = (v - v0).reshape(-1)
        x = np.concatenate([np.asarray(xi, dtype=float) for xi in x_init])
        y[self.s_xb] = x - m.X_stack @ v0
        if self.output_fb:
            xh = np.concatenate([np.asarray(h, dtype=float) for h in xhat_init])
            y[self.s_xt] = xh - x
        return y

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        m_t = mu(self.model.schedule, t)
        return self.M0 @ y + m_t * (self.M1 @ y)

    def closed_loop_state(self, y: np.ndarray) -> ClosedLoopState:
        m = self.model
        v0 = y[self.s_v0].copy()
        v = y[self.s_vt].reshape(m.N, m.q) + v0
        x_flat = y[self.s_xb] + m.X_stack @ v0
        xhat = None
        if self.output_fb:
            xhat = _split_by_dims(x_flat + y[self.s_xt], m.n_i)
        return ClosedLoopState(v0=v0, v=v, x=_split_by_dims(x_flat, m.n_i), xhat=xhat)

    def outputs(self, y: np.ndarray, m_t: float) -> dict:
        e = (self.e0 @ y) + m_t * (self.e1 @ y)
        ut = (self.u0 @ y) + m_t * (self.u1 @ y)
        out = {
            "e": e,
            "e_norm": float(np.linalg.norm(e)),
            "v_tilde_norm": float(np.linalg.norm(y[self.s_vt])),
            "x_bar_norm": float(np.linalg.norm(y[self.s_xb])),
            "x_tilde_norm": float(np.linalg.norm(y[self.s_xt])) if self.output_fb else None,
            "u_tilde_norm": float(np.linalg.norm(ut)),
            "phi1": m_t * float(np.linalg.norm(self.phi1_map @ y)),
            "phi2": None, "phi3": None, "phi4": None,
            "state": self.closed_loop_state(y),
        }
        if self.output_fb:
            out["phi3"] = m_t * float(np.linalg.norm(self.phi3_map @ y))
            out["phi4"] = m_t * float(np.linalg.norm(self.phi4_map @ y))
        else:
            out["phi2"] = m_t * float(np.linalg.norm(self.phi2_map @ y))
        return out


class _BaselineSystem:
    """Plant-coordinate stacked form of a baseline controller."""

    def __init__(self, model: ClosedLoopModel, kind: str, constants: BaselineConstants):
        if model.L_blk is None:
            raise ValueError("baselines use the local observer; synth L/Ltil first")
        self.model = model
        self.kind = kind
        self.c = constants
        N, q, nx = model.N, model.q, model.nx
        self.dim = q + N * q + 2 * nx
        self.s_v0 = slice(0, q)
        self.s_v = slice(q, q + N * q)
        self.s_x = slice(q + N * q, q + N * q + nx)
        self.s_xh = slice(q + N * q + nx, self.dim)
        self.ones_v0 = lambda v0: np.tile(v0, N)

    def initial_state(self, v0_init, v_init, x_init, xhat_init) -> np.ndarray:
        y = np.zeros(self.dim)
        y[self.s_v0] = np.asarray(v0_init, dtype=float)
        y[self.s_v] = np.asarray(v_init, dtype=float).reshape(-1)
        y[self.s_x] = np.concatenate([np.asarray(xi, dtype=float) for xi in x_init])
        y[self.s_xh] = np.concatenate([np.asarray(h, dtype=float) for h in xhat_init])
        return y

    def control(self, y: np.ndarray) -> np.ndarray:
        m = self.model
        v, xh = y[self.s_v], y[self.s_xh]
        u = m.Kbar_blk @ xh + m.Ktil_blk @ v
        if self.kind == "fixed_time":
            track = xh - m.X_blk @ v
            u = u + m.K_blk @ np.sign(track) + m.K_blk @ sig(track, self.c.c4)
        return u

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        m = self.model
        v0 = y[self.s_v0]
        v, x, xh = y[self.s_v], y[self.s_x], y[self.s_xh]
        v0_rep = self.ones_v0(v0)
        u = self.control(y)
        chi = -m.Hq @ (v - v0_rep)
        y_meas = m.Cm_blk @ x + m.Dm_blk @ u + m.Fm_stack @ v0
        innovation = y_meas - m.Cm_blk @ xh - m.Dm_blk @ u - m.Fm_blk @ v
        dy = np.empty_like(y)
        dy[self.s_v0] = m.exo.S0 @ v0
        if self.kind == "asymptotic":
            dy[self.s_v] = m.S0_blk @ v + m.gains.psi * chi
            dxh = m.A_blk @ xh + m.B_blk @ u + m.E_blk @ v + m.L_blk @ innovation
        else:
            dy[self.s_v] = (m.S0_blk @ v + self.c.c1 * chi
                            + self.c.c2 * np.sign(chi) + self.c.c3 * sig(chi, self.c.c4))
            dxh = (m.A_blk @ xh + m.B_blk @ u + m.E_blk @ v + m.L_blk @ innovation
                   + m.Ltil_blk @ np.sign(innovation) + m.Ltil_blk @ sig(innovation, self.c.c4))
        dy[self.s_x] = m.A_blk @ x + m.B_blk @ u + m.E_stack @ v0
        dy[self.s_xh] = dxh
        return dy

    def outputs(self, y: np.ndarray, m_t: float) -> dict:
        m = self.model
        v0 = y[self.s_v0]
        v, x, xh = y[self.s_v], y[self.s_x], y[self.s_xh]
        u = self.control(y)
        e = m.C_blk @ x + m.D_blk @ u + m.F_stack @ v0
        vt = v - self.ones_v0(v0)
        xb = x - m.X_stack @ v0
        ut = u - m.U_stack @ v0
        return {
            "e": e, "e_norm": float(np.linalg.norm(e)),
            "v_tilde_norm": float(np.linalg.norm(vt)),
            "x_bar_norm": float(np.linalg.norm(xb)),
            "x_tilde_norm": float(np.linalg.norm(xh - x)),
            "u_tilde_norm": float(np.linalg.norm(ut)),
            "phi1": None, "phi2": None, "phi3": None, "phi4": None,
            "state": self.closed_loop_state(y),
        }

    def closed_loop_state(self, y: np.ndarray) -> ClosedLoopState:
        m = self.model
        return ClosedLoopState(
            v0=y[self.s_v0].copy(),
            v=y[self.s_v].reshape(m.N, m.q).copy(),
            x=_split_by_dims(y[self.s_x], m.n_i),
            xhat=_split_by_dims(y[self.s_xh], m.n_i),
        )


class _Recorder:
    def __init__(self):
        self.rows = []

    def add(self, t: float, m_t: float, out: dict) -> None:
        if self.rows and abs(self.rows[-1][0] - t) < 1e-15:
            return
        self.rows.append((t, m_t, out))


def _drive(system, y0: np.ndarray, schedule: MuSchedule, cfg: SimConfig,
           mu_guarded: bool) -> tuple[_Recorder, bool, float | None, str]:
    """Shared RK4 driver.  Returns (recorder, escaped, escape_time, diagnostic)."""
    rec = _Recorder()
    y = y0.copy()
    t = schedule.t0
    horizon = schedule.horizon
    clamp_t = horizon - schedule.eps
    rhs = system.rhs

    def record(t_, y_):
        m_t = mu(schedule, t_)
        rec.add(t_, m_t, system.outputs(y_, m_t))

    def bad(y_) -> bool:
        return (not np.all(np.isfinite(y_))) or float(np.abs(y_).max()) > ESCAPE_NORM

    record(t, y)
    steps = 0
    while t < cfg.duration - 1e-12:
        if mu_guarded and t < clamp_t:
            m_t = mu(schedule, t)
            h = max(cfg.min_dt, min(cfg.dt, cfg.guard / m_t))
            boundary = min(clamp_t, cfg.duration)
        else:
            h = cfg.dt
            boundary = cfg.duration if t >= horizon - 1e-15 else min(horizon, cfg.duration)
        if t + h > boundary - 1e-15:
            h = boundary - t
        if h <= 0:
            break
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t + h
        steps += 1
        if bad(y):
            return rec, True, t, f"finite-escape detected at t = {t:.9g} (state norm > {ESCAPE_NORM:g})"
        at_clamp = mu_guarded and abs(t - clamp_t) < 1e-15 and clamp_t < cfg.duration
        at_boundary = abs(t - boundary) < 1e-15
        if steps % cfg.stride == 0 or at_clamp or at_boundary:
            record(t, y)
        if at_clamp:
            # Jump across the capped sliver [horizon - eps, horizon]; the
            # post-horizon branch continues from the clamped state.
            t = horizon
            if t < cfg.duration - 1e-15:
                record(t, y)
    record(t, y)
    return rec, False, None, ""


def integrate(scenario, config: SimConfig | None = None,
              model: ClosedLoopModel | None = None) -> Trajectory:
    """Integrate one scenario in the requested mode and sample the run.

    `scenario` provides the network, agents, exosystem, gain declaration,
    mu schedule, simulation config, and initial conditions.  A finite
    escape does not raise: the truncated trajectory is returned with the
    escape flagged, since divergence is itself a meaningful outcome.
    """
    cfg = config or scenario.sim_config
    sched = scenario.mu_schedule
    if cfg.duration <= sched.horizon:
        warnings.warn(
            f"duration {cfg.duration} does not extend beyond the horizon {sched.horizon}; "
            "post-horizon behaviour cannot be certified", stacklevel=2)
    if model is None:
        model = compile_model(scenario)

    if cfg.mode in PTCOR_MODES:
        system = _PtcorSystem(model, output_fb=(cfg.mode == "output_fb"))
        mu_guarded = True
    else:
        kind = "asymptotic" if cfg.mode == "baseline_asymptotic" else "fixed_time"
        system = _BaselineSystem(model, kind, cfg.baseline)
        mu_guarded = False
    y0 = system.initial_state(scenario.exo.v0_init, scenario.v_init,
                              scenario.x_init, scenario.xhat_init)
    rec, escaped, t_esc, diag = _drive(system, y0, sched, cfg, mu_guarded)

    ts = np.array([r[0] for r in rec.rows])
    mus = np.array([r[1] for r in rec.rows])
    outs = [r[2] for r in rec.rows]

    def col(key) -> np.ndarray | None:
        vals = [o[key] for o in outs]
        if any(v is None for v in vals):
            return None
        return np.array(vals)

    return Trajectory(
        mode=cfg.mode,
        t=ts,
        mu=mus,
        e=np.vstack([o["e"] for o in outs]),
        e_norm=col("e_norm"),
        v_tilde_norm=col("v_tilde_norm"),
        x_bar_norm=col("x_bar_norm"),
        x_tilde_norm=col("x_tilde_norm"),
        u_tilde_norm=col("u_tilde_norm"),
        phi={k: col(f"phi{k}") for k in (1, 2, 3, 4)},
        output_dims=list(model.p_i),
        states=[o["state"] for o in outs],
        finite_escape=escaped,
        escape_time=t_esc,
        diagnostic=diag,
    )
