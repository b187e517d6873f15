"""Diagnostic prediction tasks and seeded transition streams.

Streams use numpy's PCG64 generator seeded with the run seed.  Each step
consumes exactly two uniforms, the first picks the behavior action and the
second the next state (inverse-CDF sampling).  The initial state consumes
one uniform before the first step.  This layout is part of the
reproducibility contract: a batch generated for many seeds at once yields
the same transitions as stepping each seed's generator by hand.
"""
from __future__ import annotations

import numpy as np

from .learners import Transition
from .mdp import (
    FeatureMap,
    FiniteMdp,
    Policy,
    PredictionTask,
    induced_kernel,
    ratio_table,
    stationary_distribution,
)

GOLDEN_TASKS = ("two_state_sutton", "two_state_new", "two_state_cetd_counterexample", "baird_7state")
RECONSTRUCTED_TASKS = ("rw_tabular", "rw_inverted", "rw_dependent", "boyan_chain")

# default RETD regularization per task in the main comparisons
DEFAULT_C = {name: 9.0 for name in GOLDEN_TASKS + RECONSTRUCTED_TASKS}
DEFAULT_C["baird_7state"] = 0.5

# 10 runs x 5000 steps everywhere except Baird
DEFAULT_STEPS = {name: 5000 for name in GOLDEN_TASKS + RECONSTRUCTED_TASKS}
DEFAULT_STEPS["baird_7state"] = 10000


def _two_state_dynamics():
    # action 0 -> s1, action 1 -> s2, from either state
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    return P


def two_state_sutton() -> PredictionTask:
    mdp = FiniteMdp(_two_state_dynamics(), np.zeros((2, 2)), 0.9)
    return PredictionTask(
        mdp=mdp,
        behavior=Policy.uniform(2, 2),
        target=Policy.deterministic([1, 1], 2),
        features=FeatureMap([[1.0], [2.0]]),
        eval_target="true_value",
        name="two_state_sutton",
        theta0=[1.0],
    )


def two_state_new() -> PredictionTask:
    reward = np.zeros((2, 2))
    reward[1, 1] = 1.0
    mdp = FiniteMdp(_two_state_dynamics(), reward, 0.9)
    return PredictionTask(
        mdp=mdp,
        behavior=Policy.uniform(2, 2),
        target=Policy.deterministic([1, 1], 2),
        features=FeatureMap([[1.0], [0.6]]),
        eval_target="true_value",
        name="two_state_new",
    )


def two_state_cetd_counterexample() -> PredictionTask:
    mdp = FiniteMdp(_two_state_dynamics(), np.zeros((2, 2)), 0.9)
    return PredictionTask(
        mdp=mdp,
        behavior=Policy([[0.05, 0.95], [0.05, 0.95]]),
        target=Policy.deterministic([1, 1], 2),
        features=FeatureMap([[1.0], [0.6]]),
        eval_target="true_value",
        name="two_state_cetd_counterexample",
        theta0=[1.0],
    )


def baird_7state() -> PredictionTask:
    # action 0 = dashed (uniform over the six upper states), 1 = solid (to state 7)
    P = np.zeros((7, 2, 7))
    P[:, 0, :6] = 1.0 / 6.0
    P[:, 1, 6] = 1.0
    phi = np.zeros((7, 8))
    for i in range(6):
        phi[i, i] = 2.0
        phi[i, 7] = 1.0
    phi[6, 6] = 1.0
    phi[6, 7] = 2.0
    theta0 = np.ones(8)
    theta0[6] = 10.0
    return PredictionTask(
        mdp=FiniteMdp(P, np.zeros((7, 2)), 0.99),
        behavior=Policy(np.tile([6.0 / 7.0, 1.0 / 7.0], (7, 1))),
        target=Policy.deterministic([1] * 7, 2),
        features=FeatureMap(phi, require_full_rank=False),
        eval_target="zero",
        name="baird_7state",
        theta0=theta0,
        metadata={"rank_waiver": "7 states x 8 features; full column rank impossible, rank is 7"},
    )


def boyan_chain() -> PredictionTask:
    """13-state Boyan chain, undiscounted episodes restarted from state 12.

    State index equals the distance to the terminal state 0.  Features
    interpolate linearly between the unit vectors at states 12, 8, 4, 0.
    """
    n = 13
    P = np.zeros((n, 1, n))
    R = np.zeros((n, 1))
    for s in range(2, n):
        P[s, 0, s - 1] = P[s, 0, s - 2] = 0.5
        R[s, 0] = -3.0
    P[1, 0, 0] = 1.0
    R[1, 0] = -2.0
    P[0, 0, 12] = 1.0  # restart
    terminal = np.zeros(n, dtype=bool)
    terminal[0] = True
    phi = np.zeros((n, 4))
    anchors = [12, 8, 4, 0]
    for s in range(n):
        seg = min(int((12 - s) // 4), 2)
        hi, lo = anchors[seg], anchors[seg + 1]
        t = (hi - s) / 4.0
        phi[s, seg] = 1.0 - t
        phi[s, seg + 1] = t
    start = np.zeros(n)
    start[12] = 1.0
    one = Policy(np.ones((n, 1)))
    return PredictionTask(
        mdp=FiniteMdp(P, R, 1.0, terminal),
        behavior=one,
        target=one,
        features=FeatureMap(phi),
        eval_target="true_value",
        name="boyan_chain",
        start_dist=start,
    )


def _random_walk(name: str, phi5: np.ndarray) -> PredictionTask:
    """Five-state walk; index 5 is the terminal state, restarting in the middle."""
    n = 6
    T = 5
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    for s in range(5):
        left, right = s - 1, s + 1
        P[s, 0, T if left < 0 else left] = 1.0
        P[s, 1, T if right > 4 else right] = 1.0
    R[4, 1] = 1.0
    P[T, :, 2] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[T] = True
    target = np.tile([0.3, 0.7], (n, 1))
    target[T] = [0.5, 0.5]
    phi = np.vstack([phi5, np.zeros(phi5.shape[1])])
    start = np.zeros(n)
    start[2] = 1.0
    return PredictionTask(
        mdp=FiniteMdp(P, R, 1.0, terminal),
        behavior=Policy.uniform(n, 2),
        target=Policy(target),
        features=FeatureMap(phi),
        eval_target="true_value",
        name=name,
        start_dist=start,
    )


def rw_tabular() -> PredictionTask:
    return _random_walk("rw_tabular", np.eye(5))


def rw_inverted() -> PredictionTask:
    return _random_walk("rw_inverted", (1.0 - np.eye(5)) / 2.0)


def rw_dependent() -> PredictionTask:
    r2, r3 = 1 / np.sqrt(2), 1 / np.sqrt(3)
    phi = np.array([
        [1, 0, 0],
        [r2, r2, 0],
        [r3, r3, r3],
        [0, r2, r2],
        [0, 0, 1],
    ])
    return _random_walk("rw_dependent", phi)


CATALOG = {
    "two_state_sutton": two_state_sutton,
    "two_state_new": two_state_new,
    "two_state_cetd_counterexample": two_state_cetd_counterexample,
    "baird_7state": baird_7state,
    "boyan_chain": boyan_chain,
    "rw_tabular": rw_tabular,
    "rw_inverted": rw_inverted,
    "rw_dependent": rw_dependent,
}


def build(name: str) -> PredictionTask:
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown task {name!r}; available: {sorted(CATALOG)}") from None


def random_task(rng: np.random.Generator, n_states: int = 5, n_actions: int = 2, n_features: int = 3,
                gamma: float | None = None, name: str = "random") -> PredictionTask:
    """Dense random task: every transition and behavior probability is positive."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.normal(size=(n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_actions) * 2.0, size=n_states)
    pi = rng.dirichlet(np.ones(n_actions), size=n_states)
    if gamma is None:
        gamma = float(rng.uniform(0.1, 0.95))
    phi = rng.normal(size=(n_states, n_features))
    return PredictionTask(FiniteMdp(P, R, gamma), Policy(mu), Policy(pi), FeatureMap(phi), name=name)


# -- streams ------------------------------------------------------------------


def _cdf(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return c


class _Sampler:
    """Inverse-CDF tables shared by the single and batched generators."""

    def __init__(self, task: PredictionTask, mode: str | None = None):
        self.task = task
        mdp = task.mdp
        if mode is None:
            mode = "episodic" if mdp.is_episodic else "continuing"
        if mode not in ("continuing", "episodic"):
            raise ValueError(f"unknown stream mode {mode!r}")
        self.mode = mode
        self.mu_cdf = _cdf(task.behavior.probs)
        self.p_cdf = _cdf(mdp.transition)
        self.rho = ratio_table(task)
        self.reward = mdp.reward
        self.terminal = np.zeros(mdp.n_states, dtype=bool) if mdp.terminal is None else mdp.terminal
        if mode == "episodic" and task.start_dist is not None:
            init = task.start_dist
        else:
            init = stationary_distribution(induced_kernel(mdp, task.behavior))
        self.init_cdf = _cdf(init)

    def initial_state(self, u):
        return np.minimum(np.searchsorted(self.init_cdf, u, side="right"), len(self.init_cdf) - 1)

    def draw(self, s, u_action, u_next):
        nA = self.mu_cdf.shape[1]
        nS = self.p_cdf.shape[2]
        a = np.minimum((u_action[..., None] >= self.mu_cdf[s]).sum(-1), nA - 1)
        s2 = np.minimum((u_next[..., None] >= self.p_cdf[s, a]).sum(-1), nS - 1)
        return a, s2


class StreamGenerator:
    """Single-owner generator of behavior-policy transitions for one seed."""

    def __init__(self, task: PredictionTask, seed: int, mode: str | None = None):
        self.task = task
        self.seed = int(seed)
        self._sampler = _Sampler(task, mode)
        self.mode = self._sampler.mode
        self._rng = np.random.default_rng(self.seed)
        self.state = int(self._sampler.initial_state(self._rng.random()))
        self._first = True
        self._prev_terminal = False

    def next_transition(self) -> Transition:
        sp = self._sampler
        u = self._rng.random(2)
        s = self.state
        a, s2 = sp.draw(np.asarray(s), u[0], u[1])
        a, s2 = int(a), int(s2)
        tr = Transition(
            s=s,
            a=a,
            r=float(sp.reward[s, a]),
            s_next=s2,
            rho=float(sp.rho[s, a]),
            episode_start=bool(self._first or self._prev_terminal),
            ends_episode=bool(sp.terminal[s]),
        )
        self._first = False
        self._prev_terminal = bool(sp.terminal[s])
        self.state = s2
        return tr


def generate_batch(task: PredictionTask, seeds, steps: int, mode: str | None = None) -> dict[str, np.ndarray]:
    """Transition arrays of shape ``(steps, n_runs)``, one column per seed.

    Column ``r`` equals the first ``steps`` transitions of
    ``StreamGenerator(task, seeds[r])``.
    """
    sp = _Sampler(task, mode)
    seeds = [int(s) for s in seeds]
    n = len(seeds)
    u0 = np.empty(n)
    U = np.empty((steps, n, 2))
    for j, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        u0[j] = rng.random()
        U[:, j, :] = rng.random((steps, 2))
    S = np.empty((steps, n), dtype=np.int64)
    A = np.empty((steps, n), dtype=np.int64)
    S2 = np.empty((steps, n), dtype=np.int64)
    s = sp.initial_state(u0)
    for t in range(steps):
        a, s2 = sp.draw(s, U[t, :, 0], U[t, :, 1])
        S[t], A[t], S2[t] = s, a, s2
        s = s2
    ends = sp.terminal[S]
    starts = np.zeros_like(ends)
    if steps:
        starts[0] = True
        starts[1:] = ends[:-1]
    return {
        "s": S,
        "a": A,
        "r": sp.reward[S, A],
        "s_next": S2,
        "rho": sp.rho[S, A],
        "episode_start": starts,
        "ends_episode": ends,
    }


def batch_transition(batch: dict[str, np.ndarray], t: int) -> Transition:
    return Transition(**{k: v[t] for k, v in batch.items()})
