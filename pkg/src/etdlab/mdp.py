"""Finite MDPs, policies, linear features and the exact quantities derived from them.

Episodic problems are embedded in an ergodic chain: a state flagged as
terminal has value zero, every transition out of it restarts an episode,
and the discount on that restart transition is zero.  With that convention
one discounted kernel ``diag(gamma_s) P_pi`` serves values, emphatic
weights and key matrices alike.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

ROW_TOL = 1e-12


class ContractError(ValueError):
    """Raised when inputs violate a documented shape or value contract."""


class ErgodicityError(ValueError):
    """The chain does not have a unique stationary distribution."""


class CoverageError(ValueError):
    """The behavior policy never takes an action the target policy takes."""


def _check_stochastic(arr: np.ndarray, what: str) -> None:
    if np.any(arr < 0):
        raise ContractError(f"{what} has negative entries")
    sums = arr.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > ROW_TOL:
        raise ContractError(f"{what} rows do not sum to 1 (max dev {np.max(np.abs(sums - 1)):.3e})")


def _frozen(arr: Any) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FiniteMdp:
    transition: np.ndarray  # [s, a, s']
    reward: np.ndarray  # [s, a]
    gamma: float
    terminal: np.ndarray | None = None  # [s] bool; transitions out of these restart an episode

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ContractError(f"transition must have shape [S, A, S], got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ContractError(f"reward shape {R.shape} does not match {P.shape[:2]}")
        _check_stochastic(P, "transition")
        term = None
        if self.terminal is not None:
            term = np.asarray(self.terminal, dtype=bool).copy()
            if term.shape != (P.shape[0],):
                raise ContractError("terminal mask must have one entry per state")
            term.setflags(write=False)
            if not term.any():
                term = None
        gamma = float(self.gamma)
        if not 0.0 <= gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {gamma}")
        if gamma == 1.0 and term is None:
            raise ContractError("gamma = 1 requires terminal states (episodic embedding)")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def state_discount(self) -> np.ndarray:
        """Discount applied when bootstrapping out of each state (0 at terminals)."""
        g = np.full(self.n_states, self.gamma)
        if self.terminal is not None:
            g[self.terminal] = 0.0
        return g

    @property
    def is_episodic(self) -> bool:
        return self.terminal is not None


@dataclass(frozen=True)
class Policy:
    probs: np.ndarray  # [s, a]

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ContractError("policy must be a [S, A] matrix")
        _check_stochastic(p, "policy")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return cls(p)


@dataclass(frozen=True)
class FeatureMap:
    phi: np.ndarray  # [s, k]
    require_full_rank: bool = True

    def __post_init__(self):
        phi = _frozen(self.phi)
        if phi.ndim == 1:
            phi = _frozen(phi[:, None])
        if phi.ndim != 2:
            raise ContractError("features must be a [S, k] matrix")
        if self.require_full_rank:
            sv = np.linalg.svd(phi, compute_uv=False)
            if phi.shape[1] > phi.shape[0] or sv[-1] <= 1e-10 * sv[0]:
                raise ContractError("feature matrix does not have full column rank")
        object.__setattr__(self, "phi", phi)

    @property
    def n_features(self) -> int:
        return self.phi.shape[1]


@dataclass(frozen=True)
class PredictionTask:
    mdp: FiniteMdp
    behavior: Policy
    target: Policy
    features: FeatureMap
    eval_target: str = "true_value"  # or "zero"
    name: str = "custom"
    theta0: np.ndarray | None = None
    start_dist: np.ndarray | None = None  # episodic start distribution; None = stationary
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        S, A = self.mdp.n_states, self.mdp.n_actions
        for pol, what in ((self.behavior, "behavior"), (self.target, "target")):
            if pol.probs.shape != (S, A):
                raise ContractError(f"{what} policy shape {pol.probs.shape} != {(S, A)}")
        if self.features.phi.shape[0] != S:
            raise ContractError("feature rows must match the number of states")
        if self.eval_target not in ("true_value", "zero"):
            raise ContractError(f"unknown eval_target {self.eval_target!r}")
        uncovered = (self.target.probs > 0) & (self.behavior.probs <= 0)
        if uncovered.any():
            s, a = np.argwhere(uncovered)[0]
            raise CoverageError(f"target takes action {a} in state {s} but behavior never does")
        if self.mdp.terminal is not None:
            t = self.mdp.terminal
            if not np.allclose(self.target.probs[t], self.behavior.probs[t], atol=ROW_TOL):
                raise ContractError("target and behavior must agree at terminal states")
        theta0 = np.zeros(self.features.n_features) if self.theta0 is None else self.theta0
        theta0 = _frozen(theta0)
        if theta0.shape != (self.features.n_features,):
            raise ContractError("theta0 has the wrong length")
        object.__setattr__(self, "theta0", theta0)
        if self.start_dist is not None:
            sd = _frozen(self.start_dist)
            _check_stochastic(sd, "start distribution")
            object.__setattr__(self, "start_dist", sd)
        # ergodicity is part of validity
        stationary_distribution(induced_kernel(self.mdp, self.behavior))

    @property
    def phi(self) -> np.ndarray:
        return self.features.phi

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    @property
    def eval_states(self) -> np.ndarray:
        """States that enter the RMSE (terminal values are fixed at zero)."""
        if self.mdp.terminal is None:
            return np.arange(self.mdp.n_states)
        return np.flatnonzero(~self.mdp.terminal)

    def target_values(self) -> np.ndarray:
        if self.eval_target == "zero":
            return np.zeros(self.mdp.n_states)
        return true_value(self.mdp, self.target)


def induced_kernel(mdp: FiniteMdp, policy: Policy) -> np.ndarray:
    """State-to-state kernel ``P_policy[s, s'] = sum_a policy(a|s) P(s'|s, a)``."""
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError("policy shape does not match the MDP")
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def expected_reward(mdp: FiniteMdp, policy: Policy) -> np.ndarray:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError("policy shape does not match the MDP")
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def discounted_kernel(mdp: FiniteMdp, policy: Policy) -> np.ndarray:
    """``diag(gamma_s) P_policy``; equals ``gamma * P_policy`` for continuing tasks."""
    return mdp.state_discount[:, None] * induced_kernel(mdp, policy)


def stationary_distribution(P_mu: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix.

    Dense eigen-solve of ``P^T`` at eigenvalue one; power iteration refines
    the result when the eigenvector residual is above ``tol``.
    """
    P = np.asarray(P_mu, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ContractError("kernel must be square")
    _check_stochastic(P, "kernel")
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    vals, vecs = np.linalg.eig(P.T)
    near_one = np.abs(vals - 1.0) < 1e-8
    if near_one.sum() != 1:
        raise ErgodicityError(
            f"eigenvalue 1 has multiplicity {int(near_one.sum())}; stationary distribution not unique"
        )
    d = np.real(vecs[:, np.flatnonzero(near_one)[0]])
    d = d / d.sum()
    d = np.clip(d, 0.0, None)
    d /= d.sum()
    for _ in range(10_000):
        if np.max(np.abs(d @ P - d)) <= tol:
            break
        # lazy chain keeps periodic kernels convergent
        d = 0.5 * (d + d @ P)
        d /= d.sum()
    return d


def true_value(mdp: FiniteMdp, target: Policy) -> np.ndarray:
    """Solve ``(I - Gamma_pi) v = r_pi``."""
    G = discounted_kernel(mdp, target)
    r = expected_reward(mdp, target)
    M = np.eye(mdp.n_states) - G
    try:
        v = np.linalg.solve(M, r)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("Bellman system is singular") from exc
    if np.max(np.abs(M @ v - r)) > 1e-10 * max(1.0, np.max(np.abs(v))):
        raise ArithmeticError("Bellman system is ill-conditioned")
    return v


def importance_ratio(task: PredictionTask, s: int, a: int) -> float:
    mu = task.behavior.probs[s, a]
    if mu <= 0:
        raise CoverageError(f"behavior probability of action {a} in state {s} is zero")
    return float(task.target.probs[s, a] / mu)


def ratio_table(task: PredictionTask) -> np.ndarray:
    """``rho[s, a]`` for every pair; zero where the behavior never acts."""
    mu = task.behavior.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(mu > 0, task.target.probs / np.where(mu > 0, mu, 1.0), 0.0)
    return rho


# -- task files ---------------------------------------------------------------


def task_to_dict(task: PredictionTask) -> dict:
    mdp = task.mdp
    out = {
        "name": task.name,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
        "gamma": mdp.gamma,
        "behavior": task.behavior.probs.tolist(),
        "target": task.target.probs.tolist(),
        "phi": task.phi.tolist(),
        "eval_target": task.eval_target,
        "theta0": task.theta0.tolist(),
    }
    if mdp.terminal is not None:
        out["terminal"] = mdp.terminal.tolist()
    if task.start_dist is not None:
        out["start_dist"] = task.start_dist.tolist()
    if not task.features.require_full_rank:
        out["require_full_rank"] = False
    return out


def task_from_dict(data: dict) -> PredictionTask:
    missing = {"n_states", "n_actions", "transition", "reward", "gamma", "behavior", "target", "phi"} - set(data)
    if missing:
        raise ContractError(f"task definition is missing keys: {sorted(missing)}")
    mdp = FiniteMdp(data["transition"], data["reward"], data["gamma"], data.get("terminal"))
    if (mdp.n_states, mdp.n_actions) != (data["n_states"], data["n_actions"]):
        raise ContractError("n_states / n_actions disagree with the transition tensor")
    return PredictionTask(
        mdp=mdp,
        behavior=Policy(data["behavior"]),
        target=Policy(data["target"]),
        features=FeatureMap(data["phi"], data.get("require_full_rank", True)),
        eval_target=data.get("eval_target", "true_value"),
        name=data.get("name", "custom"),
        theta0=data.get("theta0"),
        start_dist=data.get("start_dist"),
    )


def load_task(path: str | Path) -> PredictionTask:
    with open(path, encoding="utf-8") as fh:
        return task_from_dict(json.load(fh))


def save_task(task: PredictionTask, path: str | Path) -> None:
    Path(path).write_text(json.dumps(task_to_dict(task), indent=1), encoding="utf-8")
