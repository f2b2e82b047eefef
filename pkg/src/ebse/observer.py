"""Centralized reference observer and gain design."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import DimensionError, _vector


class GainDesignError(RuntimeError):
    pass


class UnstableObserverError(ValueError):
    pass


@dataclass(eq=False)
class ObserverGain:
    """Observer gain ``L`` (n x p) with one column block per sensor."""

    L: np.ndarray
    partition: list

    def __post_init__(self):
        self.L = np.ascontiguousarray(np.array(self.L, dtype=np.float64, ndmin=2))
        self.partition = [tuple(p) for p in self.partition]
        if self.partition[-1][1] != self.L.shape[1]:
            raise DimensionError(
                f"L has {self.L.shape[1]} columns, sensor partition covers {self.partition[-1][1]}")

    @classmethod
    def for_model(cls, model, L):
        L = np.array(L, dtype=np.float64, ndmin=2)
        if L.shape != (model.n, model.p):
            raise DimensionError(f"L has shape {L.shape}, expected {(model.n, model.p)}")
        return cls(L, model.sensor_partition)

    @property
    def blocks(self):
        return [self.L[:, a:b] for a, b in self.partition]

    def block(self, i):
        a, b = self.partition[i]
        return self.L[:, a:b]


@dataclass(eq=False)
class ControllerGain:
    """State feedback ``u = F x`` with one row block per input group."""

    F: np.ndarray
    partition: list

    def __post_init__(self):
        self.F = np.ascontiguousarray(np.array(self.F, dtype=np.float64, ndmin=2))
        self.partition = [tuple(p) for p in self.partition]
        if self.partition[-1][1] != self.F.shape[0]:
            raise DimensionError(
                f"F has {self.F.shape[0]} rows, input partition covers {self.partition[-1][1]}")

    @classmethod
    def for_model(cls, model, F):
        F = np.array(F, dtype=np.float64, ndmin=2)
        if F.shape != (model.q, model.n):
            raise DimensionError(f"F has shape {F.shape}, expected {(model.q, model.n)}")
        return cls(F, model.input_partition)

    @property
    def blocks(self):
        return [self.F[a:b] for a, b in self.partition]

    def block(self, i):
        a, b = self.partition[i]
        return self.F[a:b]


@dataclass
class CentralEstimate:
    x_pred: np.ndarray
    x_filt: np.ndarray


def central_predict(model, gain, est_prev, u_prev):
    x_filt = _vector("x_filt", est_prev.x_filt, model.n)
    u_prev = _vector("u_prev", u_prev, model.q)
    return model.A @ x_filt + model.B @ u_prev


def central_update(model, gain, x_pred, y):
    x_pred = _vector("x_pred", x_pred, model.n)
    y = _vector("y", y, model.p)
    return x_pred + gain.L @ (y - model.C @ x_pred)


def observer_matrix(model, gain):
    """``(I - L C) A``."""
    return (np.eye(model.n) - gain.L @ model.C) @ model.A


def spectral_radius(M):
    M = np.atleast_2d(M)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def stability_constants(model, gain, rho=None, max_k=1_000_000):
    """Certified ``(m_c, rho_c)`` with ``||((I-LC)A)^k|| <= m_c rho_c^k``.

    ``rho`` defaults to the midpoint between the spectral radius and one.
    """
    return decay_constants(observer_matrix(model, gain), rho=rho, max_k=max_k)


def decay_constants(M, rho=None, max_k=1_000_000):
    M = np.ascontiguousarray(np.atleast_2d(np.asarray(M, dtype=np.float64)))
    sr = spectral_radius(M)
    if sr >= 1.0:
        raise UnstableObserverError(
            f"reference observer unstable: spectral radius {sr:.6g} >= 1")
    if rho is None:
        rho = 0.5 * (sr + 1.0)
    if not sr < rho < 1.0:
        raise ValueError(f"rho must lie in ({sr:.6g}, 1), got {rho}")
    m_c, horizon = kernels.power_ratio_sup(M, float(rho), int(max_k))
    if horizon < 0:
        raise GainDesignError(
            f"could not certify decay within {max_k} powers; choose rho closer to 1")
    return float(m_c), float(rho)


def _check_psd(name, M, strict):
    M = np.ascontiguousarray(np.atleast_2d(np.asarray(M, dtype=np.float64)))
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.max(np.abs(M)))):
        raise ValueError(f"{name} must be symmetric")
    low = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
    if strict and low <= 0:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {low:.3g})")
    if not strict and low < -1e-12 * max(1.0, np.max(np.abs(M))):
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {low:.3g})")
    return M


def design_kalman_gain(model, Q, R, tol=1e-10, max_iter=100_000):
    """Steady-state Kalman gain for ``x_pred + L (y - C x_pred)``."""
    Q = _check_psd("Q", Q, strict=False)
    R = _check_psd("R", R, strict=True)
    if Q.shape != (model.n, model.n) or R.shape != (model.p, model.p):
        raise DimensionError("Q must be n x n and R p x p")
    P, iters, status = kernels.riccati_filter(model.A, model.C, Q, R, tol, max_iter)
    if status == kernels.RICCATI_DIVERGED:
        raise GainDesignError(f"Riccati iteration diverged after {iters} steps; (A, C) not detectable?")
    if status == kernels.RICCATI_MAXITER:
        raise GainDesignError(f"Riccati iteration did not converge in {max_iter} steps")
    S = model.C @ P @ model.C.T + R
    L = np.linalg.solve(S, model.C @ P).T
    gain = ObserverGain.for_model(model, L)
    sr = spectral_radius(observer_matrix(model, gain))
    if sr >= 1.0:
        raise GainDesignError(f"designed observer is not stable (spectral radius {sr:.6g})")
    return gain


def design_lqr_gain(model, Qx, Ru, tol=1e-10, max_iter=100_000):
    """Infinite-horizon LQR gain ``F`` so that ``A + B F`` is stable."""
    Qx = _check_psd("Qx", Qx, strict=False)
    Ru = _check_psd("Ru", Ru, strict=True)
    if Qx.shape != (model.n, model.n) or Ru.shape != (model.q, model.q):
        raise DimensionError("Qx must be n x n and Ru q x q")
    P, iters, status = kernels.riccati_lqr(model.A, model.B, Qx, Ru, tol, max_iter)
    if status == kernels.RICCATI_DIVERGED:
        raise GainDesignError(f"Riccati iteration diverged after {iters} steps; (A, B) not stabilizable")
    if status == kernels.RICCATI_MAXITER:
        raise GainDesignError(f"Riccati iteration did not converge in {max_iter} steps")
    K = np.linalg.solve(Ru + model.B.T @ P @ model.B, model.B.T @ P @ model.A)
    gain = ControllerGain.for_model(model, -K)
    sr = spectral_radius(model.A + model.B @ gain.F)
    if sr >= 1.0:
        raise GainDesignError(f"closed loop A+BF not stable (spectral radius {sr:.6g}); (A, B) not stabilizable")
    return gain
