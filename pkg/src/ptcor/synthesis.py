"""Gain construction and certification for prescribed-time regulation.

The closed loop uses, per follower i,

    u_i = Kbar_i x_i + Ktil_i v_i + mu(t) K_i (x_i - X_i v_i)

(with x_i replaced by its observer estimate under output feedback, where
the observer injection gain is L_i + mu(t) Ltil_i).  Feasibility of the
time-varying part is an eigenvalue condition:

    max Re eig(B_i K_i) < -1          (state loop)
    min Re eig(Ltil_i Cm_i) > 1       (output-injection loop)

and the certified decay rates are Lyapunov ratios computed with the fixed
convention Q = I, which makes them reproducible (the ratio is invariant to
scaling P and Q jointly):

    theta_i    = 1 / (2 lambda_max(P_Ki)),  P_Ki (B_i K_i) + (B_i K_i)^T P_Ki = -I
    vartheta_i = 1 / (2 lambda_max(P_Li)),  likewise for -Ltil_i Cm_i.

`verify_gains` evaluates every sufficient-condition inequality once and
reports pass/fail; failures are warnings because the inequalities are
sufficient, not necessary.  Only an inconsistent feedforward gain
(Ktil != U - Kbar X) is a hard error, since it breaks the zero-error
manifold itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ObserverRate
from .numerics import eig, solve_lyapunov
from .plant import Exosystem

KTIL_CONSISTENCY_TOL = 1e-8


class SynthesisError(ValueError):
    """A closed-form gain rule cannot be applied to the given data."""


@dataclass(eq=False)
class GainSet:
    """All designed gains plus their Lyapunov certificates.

    Per-agent lists are indexed by follower.  `theta`/`P_K` are None when
    B_i K_i is not Hurwitz (no certificate exists); `vartheta`/`P_L`, `L`,
    `Ltil` are None in state-feedback configurations.
    """

    psi: float
    Kbar: list
    Ktil: list
    K: list
    L: list | None = None
    Ltil: list | None = None
    theta: list = field(default_factory=list)
    vartheta: list = field(default_factory=list)
    P_K: list = field(default_factory=list)
    P_L: list = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return len(self.K)

    def theta_min(self) -> float | None:
        vals = [t for t in self.theta if t is not None]
        return min(vals) if len(vals) == len(self.theta) and vals else None

    def vartheta_min(self) -> float | None:
        vals = [t for t in self.vartheta if t is not None]
        return min(vals) if self.vartheta and len(vals) == len(self.vartheta) else None


@dataclass
class CascadeRates:
    """Rate/exponent bundle for the two-block cascade criterion.

    alpha1, alpha2 are the prescribed-time decay rates of the driving and
    driven blocks; the driven block sees a disturbance bounded by
    sigma * mu^m_exp * ||chi_1||^n_exp, the output is bounded by
    eps_e * mu^p_exp * ||chi||, and alpha_star is the target output rate.
    """

    alpha1: float
    alpha2: float
    m_exp: float
    n_exp: float
    p_exp: float
    alpha_star: float

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "m_exp", "n_exp", "p_exp", "alpha_star"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive and finite, got {v}")
            setattr(self, name, v)


@dataclass
class ConditionCheck:
    name: str
    required: str
    measured: float
    passed: bool
    severity: str  # "error" | "warning"
    detail: str = ""


@dataclass
class ConditionReport:
    """Pass/fail table over every gain-design inequality, each appearing once."""

    checks: list

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def has_errors(self) -> bool:
        return any(c.severity == "error" and not c.passed for c in self.checks)

    def by_name(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"{'condition':<34} {'required':<30} {'measured':>12}  {'status':<6} severity"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(
                f"{c.name:<34} {c.required:<30} {c.measured:>12.6g}  {status:<6} {c.severity}"
            )
            if c.detail and not c.passed:
                lines.append(f"    {c.detail}")
        return "\n".join(lines)


def check_ptor_state(B, K) -> tuple[bool, float]:
    """State-loop feasibility: max Re eig(B K) strictly below -1."""
    BK = np.asarray(B, dtype=float) @ np.asarray(K, dtype=float)
    max_re = max(ev.real for ev in eig(BK))
    return (max_re < -1.0, float(max_re))


def check_ptor_output(Ltil, Cm) -> tuple[bool, float]:
    """Output-injection feasibility: min Re eig(Ltil Cm) strictly above 1."""
    LC = np.asarray(Ltil, dtype=float) @ np.asarray(Cm, dtype=float)
    min_re = min(ev.real for ev in eig(LC))
    return (min_re > 1.0, float(min_re))


def synthesize_K(B, mbar: float) -> np.ndarray:
    """Closed-form state gain K = -B^{-1} mbar I, giving B K = -mbar I.

    Requires square invertible B and mbar > 1; the certified rate is then
    exactly mbar (with P = I).
    """
    Bm = np.asarray(B, dtype=float)
    if Bm.ndim != 2 or Bm.shape[0] != Bm.shape[1]:
        raise SynthesisError(f"closed-form K needs square B, got shape {Bm.shape}")
    if mbar <= 1.0:
        raise SynthesisError(f"mbar must exceed 1 (got {mbar}); otherwise B K = -mbar I is too slow")
    try:
        B_inv = np.linalg.inv(Bm)
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("closed-form K needs invertible B") from exc
    return -mbar * B_inv


def synthesize_Ltil(Cm, mbar: float) -> np.ndarray:
    """Closed-form injection gain Ltil = mbar (Cm)^{-1}, giving Ltil Cm = mbar I."""
    Cmm = np.asarray(Cm, dtype=float)
    if Cmm.ndim != 2 or Cmm.shape[0] != Cmm.shape[1]:
        raise SynthesisError(f"closed-form Ltil needs square Cm, got shape {Cmm.shape}")
    if mbar <= 1.0:
        raise SynthesisError(f"mbar must exceed 1 (got {mbar})")
    try:
        Cm_inv = np.linalg.inv(Cmm)
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("closed-form Ltil needs invertible Cm") from exc
    return mbar * Cm_inv


def certify_rate(Mcl) -> tuple[np.ndarray, float]:
    """Lyapunov-certified decay rate of a Hurwitz matrix with Q = I.

    Solves P Mcl + Mcl^T P = -I and returns (P, 1 / (2 lambda_max(P))).
    The rate never exceeds the spectral abscissa magnitude of Mcl.
    """
    M = np.asarray(Mcl, dtype=float)
    max_re = max(ev.real for ev in eig(M))
    if max_re >= 0:
        raise SynthesisError(f"matrix is not Hurwitz (max Re eig = {max_re:.6g}); no rate certificate")
    P = solve_lyapunov(-M, np.eye(M.shape[0]))
    lam_max = float(np.linalg.eigvalsh(P).max())
    return P, 1.0 / (2.0 * lam_max)


def check_cascade_criterion(r: CascadeRates) -> bool:
    """Rate-coupling test for prescribed-time stability of the cascade.

    Both inequalities must hold (boundaries included):

        alpha2 >= 2 (p_exp + alpha_star)
        alpha1 >= max(2 (alpha2 + m_exp) / n_exp, 2 (p_exp + alpha_star))
    """
    floor = 2.0 * (r.p_exp + r.alpha_star)
    if r.alpha2 < floor:
        return False
    return r.alpha1 >= max(2.0 * (r.alpha2 + r.m_exp) / r.n_exp, floor)


def attach_rate_certificates(gains: GainSet, agents: list) -> GainSet:
    """Fill theta/P_K (and vartheta/P_L when output gains exist) in place."""
    gains.theta, gains.P_K = [], []
    for agent, K in zip(agents, gains.K):
        try:
            P, rate = certify_rate(agent.B @ K)
        except SynthesisError:
            P, rate = None, None
        gains.P_K.append(P)
        gains.theta.append(rate)
    gains.vartheta, gains.P_L = [], []
    if gains.Ltil is not None:
        for agent, Lt in zip(agents, gains.Ltil):
            try:
                P, rate = certify_rate(-(Lt @ agent.Cm))
            except SynthesisError:
                P, rate = None, None
            gains.P_L.append(P)
            gains.vartheta.append(rate)
    return gains


def _spectral_norm(M) -> float:
    return float(np.linalg.norm(np.asarray(M, dtype=float), 2))


def verify_gains(
    mode: str,
    gains: GainSet,
    rates: ObserverRate,
    agents: list,
    exo: Exosystem,
    regs: list,
) -> ConditionReport:
    """Evaluate every sufficient-condition inequality for the chosen mode.

    Each inequality appears exactly once, instantiated at its worst case
    over the followers; the per-agent values are kept in the detail field.
    `mode` is "state_fb" or "output_fb".  Failures are warnings except the
    feedforward consistency Ktil = U - Kbar X, which is an error.
    """
    if mode not in ("state_fb", "output_fb"):
        raise ValueError(f"mode must be 'state_fb' or 'output_fb', got {mode!r}")
    if regs is None or len(regs) != len(agents):
        raise ValueError("verify_gains needs one regulator solution per agent")
    checks: list[ConditionCheck] = []
    psi_rho = gains.psi * rates.rho_H
    n_agents = len(agents)

    def fmt(values) -> str:
        return "per agent: " + ", ".join(
            "n/a" if v is None else f"{v:.6g}" for v in values
        )

    # Distributed-observer rate.
    checks.append(ConditionCheck(
        name="observer: psi*rho_H > 1",
        required="psi*rho_H > 1",
        measured=psi_rho,
        passed=psi_rho > 1.0,
        severity="warning",
        detail=f"psi={gains.psi:.6g}, rho_H={rates.rho_H:.6g}",
    ))

    # State-loop rate exists and exceeds 1.
    thetas = list(gains.theta) if gains.theta else [None] * n_agents
    theta_ok = all(t is not None for t in thetas)
    theta_min = min(thetas) if theta_ok else float("nan")
    checks.append(ConditionCheck(
        name="state loop: theta_i > 1",
        required="min_i theta_i > 1",
        measured=theta_min,
        passed=theta_ok and theta_min > 1.0,
        severity="warning",
        detail=fmt(thetas),
    ))

    theta_max = max(thetas) if theta_ok else float("nan")
    checks.append(ConditionCheck(
        name="coupling: psi*rho_H >= theta_i + 1",
        required=f"psi*rho_H >= {theta_max + 1.0:.6g}" if theta_ok else "psi*rho_H >= theta_i + 1",
        measured=psi_rho,
        passed=theta_ok and psi_rho >= theta_max + 1.0,
        severity="warning",
        detail=fmt(thetas),
    ))

    # Necessity-side eigenvalue test for the state loop.
    state_res = [check_ptor_state(agent.B, K) for agent, K in zip(agents, gains.K)]
    worst_state = max(r for _, r in state_res)
    checks.append(ConditionCheck(
        name="solvability: max Re eig(BK) < -1",
        required="max_i max Re eig(B_i K_i) < -1",
        measured=worst_state,
        passed=all(ok for ok, _ in state_res),
        severity="warning",
        detail=fmt([r for _, r in state_res]),
    ))

    # Feedforward consistency (hard error when violated).
    mismatches = []
    for K_til, Kbar, reg in zip(gains.Ktil, gains.Kbar, regs):
        expected = reg.U - Kbar @ reg.X
        mismatches.append(float(np.abs(K_til - expected).max()))
    worst_mismatch = max(mismatches)
    checks.append(ConditionCheck(
        name="feedforward: Ktil = U - Kbar*X",
        required=f"max_i ||Ktil_i - (U_i - Kbar_i X_i)||_inf <= {KTIL_CONSISTENCY_TOL:g}",
        measured=worst_mismatch,
        passed=worst_mismatch <= KTIL_CONSISTENCY_TOL,
        severity="error",
        detail=fmt(mismatches),
    ))

    if mode == "output_fb":
        if gains.Ltil is None or gains.L is None:
            raise ValueError("output_fb verification needs L and Ltil gains")
        varthetas = list(gains.vartheta) if gains.vartheta else [None] * n_agents
        var_ok = all(t is not None for t in varthetas)
        var_min = min(varthetas) if var_ok else float("nan")
        checks.append(ConditionCheck(
            name="local observer: vartheta_i > 1",
            required="min_i vartheta_i > 1",
            measured=var_min,
            passed=var_ok and var_min > 1.0,
            severity="warning",
            detail=fmt(varthetas),
        ))

        var_max = max(varthetas) if var_ok else float("nan")
        checks.append(ConditionCheck(
            name="coupling: psi*rho_H >= vartheta_i + 1",
            required=f"psi*rho_H >= {var_max + 1.0:.6g}" if var_ok else "psi*rho_H >= vartheta_i + 1",
            measured=psi_rho,
            passed=var_ok and psi_rho >= var_max + 1.0,
            severity="warning",
            detail=fmt(varthetas),
        ))

        # Observer must outrun the state loop by 3/2.
        if theta_ok and var_ok:
            gap = min(v - t for v, t in zip(varthetas, thetas))
        else:
            gap = float("nan")
        checks.append(ConditionCheck(
            name="cascade: vartheta_i >= theta_i + 3/2",
            required="min_i (vartheta_i - theta_i) >= 1.5",
            measured=gap,
            passed=theta_ok and var_ok and gap >= 1.5,
            severity="warning",
            detail=fmt(varthetas),
        ))

        # Spectral norm is the tightest norm compatible with the Euclidean
        # vector norm, hence the choice for ||Ltil Fm||.
        if theta_ok:
            bounds = [
                t + 0.5 * _spectral_norm(Lt @ agent.Fm) ** 2 + 1.0
                for t, Lt, agent in zip(thetas, gains.Ltil, agents)
            ]
            bound = max(bounds)
        else:
            bounds, bound = [], float("nan")
        checks.append(ConditionCheck(
            name="coupling: psi*rho_H >= theta_i + ||Ltil*Fm||^2/2 + 1",
            required=f"psi*rho_H >= {bound:.6g}" if theta_ok else "psi*rho_H >= theta_i + ||Ltil Fm||^2/2 + 1",
            measured=psi_rho,
            passed=theta_ok and psi_rho >= bound,
            severity="warning",
            detail=fmt(bounds),
        ))

        out_res = [check_ptor_output(Lt, agent.Cm) for Lt, agent in zip(gains.Ltil, agents)]
        worst_out = min(r for _, r in out_res)
        checks.append(ConditionCheck(
            name="solvability: min Re eig(Ltil*Cm) > 1",
            required="min_i min Re eig(Ltil_i Cm_i) > 1",
            measured=worst_out,
            passed=all(ok for ok, _ in out_res),
            severity="warning",
            detail=fmt([r for _, r in out_res]),
        ))

    return ConditionReport(checks=checks)


@dataclass(eq=False)
class GainSpec:
    """Raw gain declaration from a scenario: explicit matrices and/or synthesis directives.

    Any of Kbar/Ktil/K/L/Ltil may be a single matrix (shared by all agents)
    or a per-agent list.  Missing K and Ltil are built from the closed-form
    rules when mbar_K / mbar_L are given; a missing Ktil is always derived
    as U - Kbar X from the regulator solution.
    """

    psi: float
    Kbar: object = None
    Ktil: object = None
    K: object = None
    L: object = None
    Ltil: object = None
    mbar_K: float | None = None
    mbar_L: float | None = None

    def _per_agent(self, value, n_agents: int, name: str):
        if value is None:
            return None
        if isinstance(value, (list, tuple)) and value and isinstance(value[0], (list, tuple, np.ndarray)) \
                and np.asarray(value[0]).ndim == 2:
            mats = [np.asarray(v, dtype=float) for v in value]
            if len(mats) != n_agents:
                raise SynthesisError(f"{name}: got {len(mats)} matrices for {n_agents} agents")
            return mats
        M = np.asarray(value, dtype=float)
        return [M.copy() for _ in range(n_agents)]


def build_gain_set(spec: GainSpec, agents: list, regs: list) -> GainSet:
    """Materialize a full GainSet from a GainSpec plus regulator solutions."""
    n_agents = len(agents)
    if len(regs) != n_agents:
        raise SynthesisError("need one regulator solution per agent")
    if spec.psi <= 0:
        raise SynthesisError(f"psi must be positive, got {spec.psi}")

    kbar = spec._per_agent(spec.Kbar, n_agents, "Kbar")
    if kbar is None:
        kbar = [np.zeros((a.m, a.n)) for a in agents]
    ktil = spec._per_agent(spec.Ktil, n_agents, "Ktil")
    if ktil is None:
        ktil = [reg.U - kb @ reg.X for reg, kb in zip(regs, kbar)]
    kk = spec._per_agent(spec.K, n_agents, "K")
    if kk is None:
        if spec.mbar_K is None:
            raise SynthesisError("no K gain: give explicit K or the directive mbar_K")
        kk = [synthesize_K(a.B, spec.mbar_K) for a in agents]
    ll = spec._per_agent(spec.L, n_agents, "L")
    ltil = spec._per_agent(spec.Ltil, n_agents, "Ltil")
    if ltil is None and spec.mbar_L is not None:
        ltil = [synthesize_Ltil(a.Cm, spec.mbar_L) for a in agents]
    if ltil is not None and ll is None:
        ll = [np.zeros((a.n, a.pm)) for a in agents]
    if ll is not None and ltil is None:
        raise SynthesisError(
            "output-injection gains incomplete: L given without Ltil "
            "(give explicit Ltil or the directive mbar_L)"
        )

    for i, (a, kb, kt, km) in enumerate(zip(agents, kbar, ktil, kk)):
        for name, M, shape in (("Kbar", kb, (a.m, a.n)), ("Ktil", kt, (a.m, a.q)), ("K", km, (a.m, a.n))):
            if M.shape != shape:
                raise SynthesisError(f"{name}[{i}] has shape {M.shape}, expected {shape}")
    if ltil is not None:
        for i, (a, lm, lt) in enumerate(zip(agents, ll, ltil)):
            for name, M, shape in (("L", lm, (a.n, a.pm)), ("Ltil", lt, (a.n, a.pm))):
                if M.shape != shape:
                    raise SynthesisError(f"{name}[{i}] has shape {M.shape}, expected {shape}")

    gains = GainSet(psi=float(spec.psi), Kbar=kbar, Ktil=ktil, K=kk, L=ll, Ltil=ltil)
    return attach_rate_certificates(gains, agents)
