"""Follower and exosystem models, structural rank checks, regulator equations.

Each follower is the linear plant

    x'  = A x + B u + E v0
    e   = C x + D u + F v0         (regulated output)
    y   = Cm x + Dm u + Fm v0      (measurement output)

driven by the autonomous exosystem v0' = S0 v0.  The regulator equations

    X S0 = A X + B U + E,      0 = C X + D U + F

define the zero-error manifold x = X v0 and the feedforward input U v0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import SingularSystemError, crank, eig, solve_block_linear

REGULATOR_RTOL = 1e-10
# Repeated exosystem eigenvalues are collapsed before the rank loop.
EIGENVALUE_DEDUP_TOL = 1e-8


class RegulatorError(ValueError):
    """The regulator equations are not (numerically) solvable."""


def _mat(value, rows, cols, name):
    M = np.asarray(value, dtype=float)
    if M.shape != (rows, cols):
        raise ValueError(f"{name} has shape {M.shape}, expected ({rows}, {cols})")
    if not np.isfinite(M).all():
        raise ValueError(f"{name} contains non-finite entries")
    return M


@dataclass(eq=False)
class AgentModel:
    """State-space matrices of one follower; dimensions are cross-checked."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    Cm: np.ndarray
    Dm: np.ndarray
    Fm: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {B.shape}")
        m = B.shape[1]
        E = np.asarray(self.E, dtype=float)
        if E.ndim != 2 or E.shape[0] != n:
            raise ValueError(f"E must have {n} rows, got shape {E.shape}")
        q = E.shape[1]
        C = np.asarray(self.C, dtype=float)
        if C.ndim != 2 or C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got shape {C.shape}")
        p = C.shape[0]
        Cm = np.asarray(self.Cm, dtype=float)
        if Cm.ndim != 2 or Cm.shape[1] != n:
            raise ValueError(f"Cm must have {n} columns, got shape {Cm.shape}")
        pm = Cm.shape[0]
        self.A = _mat(A, n, n, "A")
        self.B = _mat(B, n, m, "B")
        self.E = _mat(E, n, q, "E")
        self.C = _mat(C, p, n, "C")
        self.D = _mat(self.D, p, m, "D")
        self.F = _mat(self.F, p, q, "F")
        self.Cm = _mat(Cm, pm, n, "Cm")
        self.Dm = _mat(self.Dm, pm, m, "Dm")
        self.Fm = _mat(self.Fm, pm, q, "Fm")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def pm(self) -> int:
        return self.Cm.shape[0]

    @property
    def q(self) -> int:
        return self.E.shape[1]


@dataclass(eq=False)
class Exosystem:
    """Autonomous reference generator v0' = S0 v0.

    S0 is expected to be neutrally stable (spectrum in the closed left half
    plane).  A violation is reported as a warning rather than an error so
    that exploratory scenarios can still be simulated.
    """

    S0: np.ndarray
    v0_init: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S0, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError(f"S0 must be square, got shape {S.shape}")
        v = np.asarray(self.v0_init, dtype=float).reshape(-1)
        if v.shape[0] != S.shape[0]:
            raise ValueError(f"v0_init has length {v.shape[0]}, expected {S.shape[0]}")
        self.S0 = S
        self.v0_init = v
        worst = max(ev.real for ev in eig(S))
        if worst > 1e-9:
            warnings.warn(
                f"exosystem is not neutrally stable: max Re(eig(S0)) = {worst:.4g} > 0",
                stacklevel=2,
            )

    @property
    def q(self) -> int:
        return self.S0.shape[0]


@dataclass(eq=False)
class RegulatorSolution:
    """Solution (X, U) of the regulator equations with achieved residuals."""

    X: np.ndarray
    U: np.ndarray
    residual_dynamics: float
    residual_output: float


@dataclass
class RegulationRankResult:
    """Outcome of the per-eigenvalue rank test, truthy iff all ranks are full."""

    ok: bool
    required: int
    checks: list = field(default_factory=list)  # (eigenvalue, measured rank)

    def __bool__(self) -> bool:
        return self.ok


def _distinct_eigenvalues(S0: np.ndarray) -> list[complex]:
    distinct: list[complex] = []
    for ev in eig(S0):
        if all(abs(ev - seen) > EIGENVALUE_DEDUP_TOL for seen in distinct):
            distinct.append(complex(ev))
    return distinct


def check_regulation_rank(agent: AgentModel, exo: Exosystem, tol: float = 1e-9) -> RegulationRankResult:
    """Test that [A - cI, B; C, D] has full row rank n+p at every exosystem eigenvalue.

    This is the solvability condition for the regulator equations; the
    result records the measured rank per distinct eigenvalue.
    """
    n, p = agent.n, agent.p
    required = n + p
    result = RegulationRankResult(ok=True, required=required)
    for c in _distinct_eigenvalues(exo.S0):
        block = np.block([
            [agent.A - c * np.eye(n), agent.B.astype(complex)],
            [agent.C.astype(complex), agent.D.astype(complex)],
        ])
        r = crank(block, tol)
        result.checks.append((c, r))
        if r != required:
            result.ok = False
    return result


def check_full_rank_io(agent: AgentModel, tol: float = 1e-9) -> bool:
    """True iff rank(B) = rank(Cm) = n, the prerequisite for the closed-form gain rules."""
    n = agent.n
    return crank(agent.B, tol) == n and crank(agent.Cm, tol) == n


def solve_regulator(agent: AgentModel, exo: Exosystem) -> RegulatorSolution:
    """Solve X S0 = A X + B U + E and 0 = C X + D U + F by vectorization.

    The two matrix equations become one linear system in (vec X, vec U);
    with p = m the system is square and solved directly, otherwise a
    least-squares solution is accepted only if it meets the same residual
    tolerance, so a rank-deficient problem can never return a spurious fit.
    """
    A, B, E = agent.A, agent.B, agent.E
    C, D, F = agent.C, agent.D, agent.F
    S0 = exo.S0
    n, m, p, q = agent.n, agent.m, agent.p, agent.q

    In, Iq = np.eye(n), np.eye(q)
    top = np.hstack([np.kron(S0.T, In) - np.kron(Iq, A), -np.kron(Iq, B)])
    bottom = np.hstack([np.kron(Iq, C), np.kron(Iq, D)])
    M = np.vstack([top, bottom])
    rhs = np.concatenate([E.flatten(order="F"), -F.flatten(order="F")])

    try:
        if M.shape[0] == M.shape[1]:
            z = solve_block_linear(M, rhs)
        else:
            z, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    except SingularSystemError as exc:
        raise RegulatorError(
            "regulator equations are numerically singular; the rank condition "
            "on [A - cI, B; C, D] fails at some exosystem eigenvalue "
            "(run check_regulation_rank for the per-eigenvalue detail)"
        ) from exc

    X = z[: n * q].reshape((n, q), order="F")
    U = z[n * q:].reshape((m, q), order="F")
    res_dyn = float(np.abs(X @ S0 - A @ X - B @ U - E).max())
    res_out = float(np.abs(C @ X + D @ U + F).max())
    scale_dyn = max(1.0, np.abs(X @ S0).max(), np.abs(A @ X).max(), np.abs(B @ U).max(), np.abs(E).max())
    scale_out = max(1.0, np.abs(C @ X).max(), np.abs(D @ U).max(), np.abs(F).max())
    if res_dyn > REGULATOR_RTOL * scale_dyn or res_out > REGULATOR_RTOL * scale_out:
        raise RegulatorError(
            f"regulator residuals too large (dynamics {res_dyn:.3e}, output {res_out:.3e}); "
            "the rank condition on [A - cI, B; C, D] fails numerically"
        )
    return RegulatorSolution(X=X, U=U, residual_dynamics=res_dyn, residual_output=res_out)
