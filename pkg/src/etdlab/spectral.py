"""Exact key matrices of TD, ETD, CETD and RETD and their stability certificates.

All matrices here are built from closed-form stationary expectations.  The
joint CETD/RETD matrix acts on ``z = [theta, omega]``; its off-diagonal
blocks are ``Phi^T d_mu`` and ``f^T (I - Gamma_pi) Phi``, which coincide
because ``f^T (I - Gamma_pi) = d_mu^T``.  The top-left emphatic block is not
symmetric for multi-feature tasks, so positive definiteness is always judged
on the quadratic form (the symmetric part).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import (
    PredictionTask,
    discounted_kernel,
    expected_reward,
    induced_kernel,
    stationary_distribution,
)

PD_RTOL = 1e-10
SYM_TOL = 1e-10


class ThresholdUndefined(ValueError):
    """c_min needs a positive definite emphatic block."""


class NoStableFixedPoint(ValueError):
    pass


def behavior_distribution(task: PredictionTask) -> np.ndarray:
    return stationary_distribution(induced_kernel(task.mdp, task.behavior))


def emphatic_weights(task: PredictionTask) -> np.ndarray:
    """``f = (I - Gamma_pi^T)^{-1} d_mu``."""
    d = behavior_distribution(task)
    G = discounted_kernel(task.mdp, task.target)
    try:
        return np.linalg.solve(np.eye(len(d)) - G.T, d)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("emphatic system is singular") from exc


def coupling_identity_check(task: PredictionTask) -> float:
    """Max-norm residual of ``f^T (I - Gamma_pi) - d_mu^T``."""
    d = behavior_distribution(task)
    f = emphatic_weights(task)
    G = discounted_kernel(task.mdp, task.target)
    return float(np.max(np.abs(f @ (np.eye(len(d)) - G) - d)))


def symmetric_part(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(M)
    return 0.5 * (M + M.T)


def is_symmetric(M: np.ndarray, tol: float = SYM_TOL) -> bool:
    M = np.atleast_2d(M)
    return bool(np.max(np.abs(M - M.T), initial=0.0) <= tol * max(1.0, np.max(np.abs(M))))


def pd_by_eigenvalues(M: np.ndarray, rtol: float = PD_RTOL) -> bool:
    S = symmetric_part(M)
    eig = np.linalg.eigvalsh(S)
    scale = np.linalg.norm(S, 2)
    return bool(scale > 0 and eig[0] > rtol * scale)


def leading_minors(M: np.ndarray) -> np.ndarray:
    S = symmetric_part(M)
    return np.array([np.linalg.det(S[:k, :k]) for k in range(1, S.shape[0] + 1)])


def pd_by_minors(M: np.ndarray, rtol: float = PD_RTOL) -> bool:
    # Sylvester's criterion; minor k is scaled by ||S||^k for the tolerance
    S = symmetric_part(M)
    scale = np.linalg.norm(S, 2)
    if scale == 0:
        return False
    minors = leading_minors(S)
    return bool(all(m > rtol * scale ** (k + 1) for k, m in enumerate(minors)))


def is_positive_definite(M: np.ndarray) -> bool:
    return pd_by_eigenvalues(M)


def spectrum(M: np.ndarray) -> np.ndarray:
    """Eigenvalues sorted descending (by real part); real when ``M`` is symmetric."""
    M = np.atleast_2d(M)
    if is_symmetric(M):
        return np.linalg.eigvalsh(symmetric_part(M))[::-1]
    vals = np.linalg.eigvals(M)
    vals = vals[np.argsort(-vals.real, kind="stable")]
    if np.max(np.abs(vals.imag)) <= 1e-12:
        return vals.real
    return vals


def hurwitz_check(matrix: np.ndarray) -> tuple[bool, float]:
    """Whether ``-matrix`` is Hurwitz, together with its spectral abscissa."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    abscissa = float(np.max(np.linalg.eigvals(-M).real))
    return abscissa < 0.0, abscissa


def joint_matrix(a_etd: np.ndarray, b_up: np.ndarray, b_low: np.ndarray, c: float) -> np.ndarray:
    k = a_etd.shape[0]
    G = np.empty((k + 1, k + 1))
    G[:k, :k] = a_etd
    G[:k, k] = b_up
    G[k, :k] = b_low
    G[k, k] = 1.0 + c
    return G


@dataclass
class MMatrixCertificate:
    c: float
    K: np.ndarray
    max_offdiag: float
    column_sums: np.ndarray
    expected_column_sums: np.ndarray
    row_sums: np.ndarray
    expected_row_sums: np.ndarray
    offdiag_nonpositive: bool
    columns_positive: bool
    rows_nonnegative: bool
    rows_positive: bool

    @property
    def certified(self) -> bool:
        # strictly positive column sums + nonnegative rows make K + K^T strictly
        # diagonally dominant, which is all the completing-the-square step needs
        return self.offdiag_nonpositive and self.columns_positive and self.rows_nonnegative


def residual_matrix_certificate(task: PredictionTask, c: float, tol: float = 1e-12) -> MMatrixCertificate:
    if c < 0:
        raise ValueError("c must be nonnegative")
    d = behavior_distribution(task)
    f = emphatic_weights(task)
    G = discounted_kernel(task.mdp, task.target)
    n = len(d)
    FI = f[:, None] * (np.eye(n) - G)
    K = FI - np.outer(d, d) / (1.0 + c)
    off = K[~np.eye(n, dtype=bool)]
    max_off = float(off.max()) if off.size else -np.inf
    cols = K.sum(axis=0)
    rows = K.sum(axis=1)
    exp_cols = (c / (1.0 + c)) * d
    exp_rows = FI.sum(axis=1) - d / (1.0 + c)
    return MMatrixCertificate(
        c=float(c),
        K=K,
        max_offdiag=max_off,
        column_sums=cols,
        expected_column_sums=exp_cols,
        row_sums=rows,
        expected_row_sums=exp_rows,
        offdiag_nonpositive=bool(max_off <= tol),
        columns_positive=bool(np.all(cols > tol)),
        rows_nonnegative=bool(np.all(rows >= -tol)),
        rows_positive=bool(np.all(rows > tol)),
    )


def _emphatic_blocks(task: PredictionTask):
    phi = task.phi
    d = behavior_distribution(task)
    f = emphatic_weights(task)
    n = len(d)
    IG = np.eye(n) - discounted_kernel(task.mdp, task.target)
    a_td = phi.T @ (d[:, None] * IG) @ phi
    a_etd = phi.T @ (f[:, None] * IG) @ phi
    b_up = phi.T @ d
    b_low = f @ IG @ phi
    return d, f, a_td, a_etd, b_up, b_low


def c_min(task: PredictionTask) -> float:
    """Smallest c with the RETD matrix positive definite, ``b^T A^{-1} b - 1``.

    ``A`` is the symmetric part of the emphatic block (the matrix itself for
    scalar features).  Negative values mean CETD is already positive definite.
    """
    _, _, _, a_etd, b_up, _ = _emphatic_blocks(task)
    return _c_min_from(a_etd, b_up)


def _c_min_from(a_etd: np.ndarray, b: np.ndarray) -> float:
    if not pd_by_eigenvalues(a_etd):
        raise ThresholdUndefined("emphatic block is not positive definite; c_min is undefined")
    A = symmetric_part(a_etd)
    return float(b @ np.linalg.solve(A, b) - 1.0)


@dataclass
class KeyMatrixReport:
    task_name: str
    d_mu: np.ndarray
    f_vector: np.ndarray
    a_td: np.ndarray
    a_etd: np.ndarray
    b_coupling: np.ndarray
    b_coupling_lower: np.ndarray
    g_cetd: np.ndarray
    g_retd: dict[float, np.ndarray]
    eigenvalues: dict[str, np.ndarray]
    determinants: dict[str, float]
    pd_flags: dict[str, bool]
    hurwitz: dict[str, bool]
    c_min: float | None
    c_min_note: str
    residual_k: dict[float, np.ndarray] = field(default_factory=dict)
    m_matrix_certificate: dict[float, MMatrixCertificate] = field(default_factory=dict)

    def g_retd_of_c(self, c: float) -> np.ndarray:
        return joint_matrix(self.a_etd, self.b_coupling, self.b_coupling_lower, c)

    def matrix_names(self) -> list[str]:
        return ["TD", "ETD", "CETD"] + [retd_label(c) for c in self.g_retd]

    def matrix(self, name: str) -> np.ndarray:
        if name == "TD":
            return self.a_td
        if name == "ETD":
            return self.a_etd
        if name == "CETD":
            return self.g_cetd
        for c, G in self.g_retd.items():
            if retd_label(c) == name:
                return G
        raise KeyError(name)

    def to_dict(self) -> dict:
        def arr(x):
            x = np.asarray(x)
            if np.iscomplexobj(x):
                return [[float(v.real), float(v.imag)] for v in x.ravel()]
            return x.tolist()

        return {
            "task": self.task_name,
            "d_mu": arr(self.d_mu),
            "f": arr(self.f_vector),
            "matrices": {n: arr(self.matrix(n)) for n in self.matrix_names()},
            "eigenvalues": {n: arr(v) for n, v in self.eigenvalues.items()},
            "determinants": dict(self.determinants),
            "pd": dict(self.pd_flags),
            "hurwitz": dict(self.hurwitz),
            "c_min": self.c_min,
            "c_min_note": self.c_min_note,
            "m_matrix": {
                str(c): {
                    "max_offdiag": cert.max_offdiag,
                    "column_sums": arr(cert.column_sums),
                    "row_sums": arr(cert.row_sums),
                    "certified": cert.certified,
                }
                for c, cert in self.m_matrix_certificate.items()
            },
        }


def retd_label(c: float) -> str:
    return f"RETD(c={c:g})"


def key_matrices(task: PredictionTask, c_values=(9.0,)) -> KeyMatrixReport:
    c_values = [float(c) for c in c_values]
    if any(c < 0 for c in c_values):
        raise ValueError("c values must be nonnegative")
    d, f, a_td, a_etd, b_up, b_low = _emphatic_blocks(task)
    g_cetd = joint_matrix(a_etd, b_up, b_low, 0.0)
    g_retd = {c: joint_matrix(a_etd, b_up, b_low, c) for c in c_values}
    mats = {"TD": a_td, "ETD": a_etd, "CETD": g_cetd}
    mats.update({retd_label(c): G for c, G in g_retd.items()})
    try:
        cm, note = _c_min_from(a_etd, b_up), ""
        if cm < 0:
            note = "always PD"
    except ThresholdUndefined as exc:
        cm, note = None, str(exc)
    certs = {c: residual_matrix_certificate(task, c) for c in c_values}
    return KeyMatrixReport(
        task_name=task.name,
        d_mu=d,
        f_vector=f,
        a_td=a_td,
        a_etd=a_etd,
        b_coupling=b_up,
        b_coupling_lower=b_low,
        g_cetd=g_cetd,
        g_retd=g_retd,
        eigenvalues={n: spectrum(M) for n, M in mats.items()},
        determinants={n: float(np.linalg.det(M)) for n, M in mats.items()},
        pd_flags={n: pd_by_eigenvalues(M) for n, M in mats.items()},
        hurwitz={n: hurwitz_check(M)[0] for n, M in mats.items()},
        c_min=cm,
        c_min_note=note,
        residual_k={c: cert.K for c, cert in certs.items()},
        m_matrix_certificate=certs,
    )


def mean_field_terms(task: PredictionTask, algorithm: str, c: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form drift ``(h, G)`` of the mean-field ODE ``z' = h - G z``."""
    algorithm = algorithm.upper()
    d, f, a_td, a_etd, b_up, b_low = _emphatic_blocks(task)
    r = expected_reward(task.mdp, task.target)
    phi = task.phi
    if algorithm == "TD":
        return phi.T @ (d * r), a_td
    if algorithm == "ETD":
        return phi.T @ (f * r), a_etd
    if algorithm in ("CETD", "RETD"):
        if algorithm == "CETD":
            c = 0.0
        h = np.append(phi.T @ (f * r), f @ r)
        return h, joint_matrix(a_etd, b_up, b_low, c)
    raise ValueError(f"no closed-form mean field for {algorithm}")


def mean_field_fixed_point(task: PredictionTask, algorithm: str, c: float = 0.0) -> tuple[np.ndarray, float]:
    """Equilibrium ``G^{-1} h`` of the mean-field ODE and the RMSE of its value estimate."""
    h, G = mean_field_terms(task, algorithm, c)
    if not pd_by_eigenvalues(G):
        raise NoStableFixedPoint(f"{algorithm} key matrix is not positive definite")
    try:
        z = np.linalg.solve(G, h)
    except np.linalg.LinAlgError as exc:
        raise NoStableFixedPoint("key matrix is singular") from exc
    theta = z[: task.phi.shape[1]]
    target = task.target_values()
    idx = task.eval_states
    err = task.phi[idx] @ theta - target[idx]
    return z, float(np.sqrt(np.mean(err**2)))


def integrate_mean_field(h: np.ndarray, G: np.ndarray, z0: np.ndarray, dt: float = 1e-3,
                         tol: float = 1e-6, max_steps: int = 5_000_000) -> tuple[np.ndarray, int]:
    """Explicit Euler on ``z' = h - G z`` until consecutive iterates stop moving.

    Returns the final iterate and the number of steps taken.  Stops when the
    Euler increment implies a distance to equilibrium below ``tol``.
    """
    G = np.atleast_2d(G)
    z = np.array(z0, dtype=float)
    h = np.asarray(h, dtype=float)
    # a step of size dt moves by dt*(h - Gz); distance to equilibrium is bounded
    # by ||G^{-1}|| * ||h - G z||
    ginv_norm = np.linalg.norm(np.linalg.pinv(G), 2)
    for n in range(1, max_steps + 1):
        drift = h - G @ z
        z = z + dt * drift
        if n % 64 == 0 and ginv_norm * np.linalg.norm(h - G @ z) < 0.1 * tol:
            return z, n
        if not np.all(np.isfinite(z)):
            break
    return z, max_steps
