"""Incremental linear TD learners as pure step functions.

Every array in :class:`LearnerState` and :class:`Transition` may carry
leading batch dimensions; the harness advances many independent runs in one
call, a single run is simply the batch shape ``()``.  Rows never interact,
so a run's trajectory does not depend on which other runs share its batch.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .mdp import PredictionTask, ratio_table, stationary_distribution, induced_kernel


class Algorithm(str, enum.Enum):
    TD = "TD"
    GTD2 = "GTD2"
    TDC = "TDC"
    TDRC = "TDRC"
    ETD = "ETD"
    TETD = "TETD"
    CETD = "CETD"
    RETD = "RETD"

    @classmethod
    def parse(cls, name) -> "Algorithm":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ValueError(f"unknown algorithm {name!r}; choose from {[a.value for a in cls]}") from None


EMPHATIC = frozenset({Algorithm.ETD, Algorithm.TETD, Algorithm.CETD, Algorithm.RETD})
GRADIENT = frozenset({Algorithm.GTD2, Algorithm.TDC, Algorithm.TDRC})
CENTERED = frozenset({Algorithm.CETD, Algorithm.RETD})


@dataclass(frozen=True)
class AlgorithmConfig:
    algorithm: Algorithm
    alpha: float
    c: float = 0.0
    beta: float = 1.0
    eta: float = 1.0
    f_max: float | None = None  # TETD bound; None means default_f_max(task)
    schedule: str = "constant"  # or "inverse": alpha / (1 + t / decay_scale)
    decay_scale: float = 1000.0

    def __post_init__(self):
        algo = Algorithm.parse(self.algorithm)
        object.__setattr__(self, "algorithm", algo)
        if algo is Algorithm.CETD:
            object.__setattr__(self, "c", 0.0)
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.f_max is not None and self.f_max < 1:
            raise ValueError("f_max must be at least 1")
        if self.schedule not in ("constant", "inverse"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def label(self) -> str:
        if self.algorithm is Algorithm.RETD:
            return f"RETD(c={self.c:g})"
        return self.algorithm.value

    def stepsize(self, t: int) -> float:
        if self.schedule == "constant":
            return self.alpha
        return self.alpha / (1.0 + t / self.decay_scale)


def default_f_max(task: PredictionTask) -> float:
    """Twice the stationary mean follow-on trace, ``2 * sum(f)``.

    Equals ``2 / (1 - gamma)`` on continuing tasks.
    """
    from .spectral import emphatic_weights

    return 2.0 * float(emphatic_weights(task).sum())


@dataclass(frozen=True)
class Transition:
    s: np.ndarray | int
    a: np.ndarray | int
    r: np.ndarray | float
    s_next: np.ndarray | int
    rho: np.ndarray | float
    episode_start: np.ndarray | bool = False
    ends_episode: np.ndarray | bool = False  # s is terminal: no bootstrapping


@dataclass(frozen=True)
class LearnerState:
    theta: np.ndarray
    omega: np.ndarray
    w: np.ndarray
    follow_on: np.ndarray
    prev_rho: np.ndarray
    poisoned: np.ndarray
    step_count: int = 0

    @classmethod
    def initial(cls, task: PredictionTask, batch: int | None = None) -> "LearnerState":
        shape = () if batch is None else (batch,)
        k = task.phi.shape[1]
        theta = np.broadcast_to(task.theta0, shape + (k,)).astype(float)
        return cls(
            theta=theta,
            omega=np.zeros(shape),
            w=np.zeros(shape + (k,)),
            follow_on=np.ones(shape),
            prev_rho=np.zeros(shape),
            poisoned=np.zeros(shape, dtype=bool),
        )


def _dot(x, y):
    return (x * y).sum(axis=-1)


def td_error(theta, transition: Transition, gamma: float, phi: np.ndarray):
    """``r + gamma_t phi(s')^T theta - phi(s)^T theta`` with ``gamma_t = 0`` out of terminals."""
    x = phi[transition.s]
    xn = phi[transition.s_next]
    disc = gamma * (1.0 - np.asarray(transition.ends_episode, dtype=float))
    return transition.r + disc * _dot(xn, theta) - _dot(x, theta)


def follow_on_trace(prev_F, prev_rho, episode_start, gamma: float, f_max: float | None = None):
    F = np.where(episode_start, 1.0, 1.0 + gamma * prev_rho * prev_F)
    if f_max is not None:
        F = np.minimum(F, f_max)
    return F


def increments(config: AlgorithmConfig, theta, omega, w, F, x, xn, r, rho, disc):
    """Unscaled update directions ``(d_theta, d_omega, d_w)`` for one transition.

    The returned directions are multiplied by the stepsize in :func:`step`.
    ``F`` is ignored by non-emphatic algorithms.
    """
    algo = config.algorithm
    disc = np.asarray(disc, dtype=float)
    delta = r + disc * _dot(xn, theta) - _dot(x, theta)
    zero_w = np.zeros_like(w)
    zero_o = np.zeros_like(omega)
    if algo is Algorithm.TD:
        return (rho * delta)[..., None] * x, zero_o, zero_w
    if algo in (Algorithm.ETD, Algorithm.TETD):
        return (F * rho * delta)[..., None] * x, zero_o, zero_w
    if algo in CENTERED:
        e = F * rho * delta
        c = 0.0 if algo is Algorithm.CETD else config.c
        return (e - omega)[..., None] * x, e - (1.0 + c) * omega, zero_w
    xw = _dot(x, w)
    dw_core = (rho * delta - xw)[..., None] * x
    if algo is Algorithm.GTD2:
        d_theta = (rho * xw)[..., None] * (x - np.expand_dims(disc, -1) * xn)
        return d_theta, zero_o, config.eta * dw_core
    d_theta = (rho * delta)[..., None] * x - (disc * rho * xw)[..., None] * xn
    if algo is Algorithm.TDC:
        return d_theta, zero_o, config.eta * dw_core
    if algo is Algorithm.TDRC:
        return d_theta, zero_o, config.eta * (dw_core - config.beta * w)
    raise ValueError(f"unsupported algorithm {algo}")


def step(state: LearnerState, config: AlgorithmConfig, transition: Transition, task: PredictionTask,
         f_max: float | None = None) -> LearnerState:
    """Advance a learner by one transition.

    Runs whose update would produce NaN/Inf are marked poisoned and keep
    their last finite values; poisoned runs ignore all later transitions.
    """
    algo = config.algorithm
    phi = task.phi
    gamma = task.gamma
    x = phi[transition.s]
    xn = phi[transition.s_next]
    ends = np.asarray(transition.ends_episode, dtype=float)
    disc = gamma * (1.0 - ends)
    rho = np.asarray(transition.rho, dtype=float)
    r = np.asarray(transition.r, dtype=float)

    if algo in EMPHATIC:
        bound = None
        if algo is Algorithm.TETD:
            bound = f_max if f_max is not None else config.f_max
            if bound is None:
                bound = default_f_max(task)
        F = follow_on_trace(state.follow_on, state.prev_rho, transition.episode_start, gamma, bound)
    else:
        F = state.follow_on

    alpha = config.stepsize(state.step_count)
    with np.errstate(over="ignore", invalid="ignore"):
        d_theta, d_omega, d_w = increments(config, state.theta, state.omega, state.w, F, x, xn, r, rho, disc)
        theta = state.theta + alpha * d_theta
        omega = state.omega + alpha * d_omega
        w = state.w + alpha * d_w
        F = np.broadcast_to(F, state.follow_on.shape)

    finite = (
        np.isfinite(theta).all(axis=-1) & np.isfinite(omega) & np.isfinite(w).all(axis=-1) & np.isfinite(F)
    )
    live = ~state.poisoned
    keep = live & finite  # rows that accept this update
    poisoned = state.poisoned | (live & ~finite)
    if np.all(keep):
        new = (theta, omega, w, F, np.broadcast_to(rho, state.prev_rho.shape).astype(float))
    else:
        kv = keep[..., None]
        new = (
            np.where(kv, theta, state.theta),
            np.where(keep, omega, state.omega),
            np.where(kv, w, state.w),
            np.where(keep, F, state.follow_on),
            np.where(keep, rho, state.prev_rho),
        )
    return replace(
        state,
        theta=new[0],
        omega=new[1],
        w=new[2],
        follow_on=new[3],
        prev_rho=new[4],
        poisoned=poisoned,
        step_count=state.step_count + 1,
    )


def expected_update(task: PredictionTask, config: AlgorithmConfig) -> tuple[np.ndarray, np.ndarray]:
    """Exact stationary drift ``(h, G)`` with mean update ``h - G z``.

    Built by enumerating ``(s, a, s')`` with weight ``d_mu(s) mu(a|s) P(s'|s,a)``;
    the follow-on trace is replaced by its conditional mean ``f(s) / d_mu(s)``.
    """
    from .spectral import emphatic_weights

    algo = config.algorithm
    if algo not in (Algorithm.TD, Algorithm.ETD, Algorithm.CETD, Algorithm.RETD):
        raise ValueError(f"no affine drift for {algo.value}")
    mdp = task.mdp
    phi = task.phi
    k = phi.shape[1]
    d = stationary_distribution(induced_kernel(mdp, task.behavior))
    f = emphatic_weights(task)
    rho_tab = ratio_table(task)
    disc = mdp.state_discount
    mu = task.behavior.probs
    joint = algo in CENTERED
    n = k + 1 if joint else k
    G = np.zeros((n, n))
    h = np.zeros(n)
    c = config.c if algo is Algorithm.RETD else 0.0
    for s in range(mdp.n_states):
        # d(s) * E[F | s] = f(s); TD uses no trace
        mass = d[s] if algo is Algorithm.TD else f[s]
        x = phi[s]
        for a in range(mdp.n_actions):
            if mu[s, a] == 0:
                continue
            for s2 in range(mdp.n_states):
                p = mdp.transition[s, a, s2]
                if p == 0:
                    continue
                wgt = mass * mu[s, a] * p * rho_tab[s, a]
                diff = x - disc[s] * phi[s2]
                r = mdp.reward[s, a]
                G[:k, :k] += wgt * np.outer(x, diff)
                h[:k] += wgt * r * x
                if joint:
                    G[k, :k] += wgt * diff
                    h[k] += wgt * r
    if joint:
        G[:k, k] = phi.T @ d
        G[k, k] = 1.0 + c
    return h, G
