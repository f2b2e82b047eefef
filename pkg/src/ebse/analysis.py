"""Stability certificates, error bounds and trace consistency checks.

All norms are Euclidean; matrix norms are the induced 2-norm.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .observer import decay_constants, observer_matrix, spectral_radius

LMI_TOL = 1e-9
MAX_SUBSET_SENSORS = 20


def mat_norm(M):
    return float(np.linalg.norm(np.atleast_2d(M), 2))


def subset_matrix(model, gain, J):
    """``(I - sum_{l in J} L_l C_l) A`` for a set of sensor channels ``J``."""
    S = np.eye(model.n)
    for l in sorted(set(J)):
        if not 0 <= l < model.n_sensors:
            raise IndexError(f"sensor index {l} out of range 0..{model.n_sensors - 1}")
        S = S - gain.block(l) @ model.C_block(l)
    return S @ model.A


def _subset_of(mask, count):
    return tuple(l for l in range(count) if (mask >> l) & 1)


@dataclass
class SubsetLmiCertificate:
    """Result of checking ``At_J' P At_J - P < 0`` for every subset ``J``.

    ``contraction`` is the largest P-weighted squared gain of any subset
    matrix, i.e. ``||At_J z||_P^2 <= contraction ||z||_P^2``.
    """

    P: np.ndarray
    checked_subsets: int
    max_eigenvalue_over_subsets: float
    worst_subset: tuple
    contraction: float
    tol: float
    pass_: bool
    failing_subsets: list = field(default_factory=list)

    @property
    def passed(self):
        return self.pass_

    def to_dict(self):
        return {
            "P": np.asarray(self.P).tolist(),
            "checked_subsets": self.checked_subsets,
            "max_eigenvalue_over_subsets": self.max_eigenvalue_over_subsets,
            "worst_subset": list(self.worst_subset),
            "contraction": self.contraction,
            "tol": self.tol,
            "pass": self.pass_,
            "failing_subsets": [list(s) for s in self.failing_subsets[:32]],
        }


def check_lemma1(model, gain, P, tol=LMI_TOL):
    """Exhaustive check of the switched-observer LMI over all sensor subsets."""
    N = model.n_sensors
    if N > MAX_SUBSET_SENSORS:
        raise ValueError(
            f"{N} sensor channels means 2^{N} subsets; refusing above {MAX_SUBSET_SENSORS}. "
            "Group sensors into fewer channels or certify with synchronous resets instead.")
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (model.n, model.n):
        raise ValueError(f"P has shape {P.shape}, expected {(model.n, model.n)}")
    if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError("P must be symmetric")
    P = 0.5 * (P + P.T)
    evals, evecs = np.linalg.eigh(P)
    if evals[0] <= 0:
        raise ValueError(f"P must be positive definite (min eigenvalue {evals[0]:.3g})")
    P_inv_half = np.ascontiguousarray((evecs / np.sqrt(evals)) @ evecs.T)
    LC = np.ascontiguousarray(np.stack([gain.block(l) @ model.C_block(l) for l in range(N)]))
    lmi_max, contraction = kernels.subset_lmi_scan(model.A, LC, np.ascontiguousarray(P), P_inv_half)
    worst = int(np.argmax(lmi_max))
    failing = [_subset_of(m, N) for m in np.flatnonzero(lmi_max >= -tol)]
    return SubsetLmiCertificate(
        P=P,
        checked_subsets=1 << N,
        max_eigenvalue_over_subsets=float(lmi_max[worst]),
        worst_subset=_subset_of(worst, N),
        contraction=float(contraction.max()),
        tol=tol,
        pass_=not failing,
        failing_subsets=failing,
    )


def _check_rho(rho_c):
    if not 0.0 <= rho_c < 1.0:
        raise ValueError(f"rho_c must lie in [0, 1), got {rho_c}")


def theorem1_bound(m_c, rho_c, norm_L, delta_est, e_i0_norm=0.0):
    """Single-link bound ``m_c ||e_i(0)|| + m_c / (1 - rho_c) ||L|| delta``."""
    _check_rho(rho_c)
    return m_c * e_i0_norm + m_c / (1.0 - rho_c) * norm_L * delta_est


def m_bar(model, gain):
    """``max_j ||L_j C_j A||``."""
    return max(mat_norm(gain.block(j) @ model.C_block(j) @ model.A) for j in range(model.n_sensors))


def theorem2_bound(m_c, rho_c, norm_L, delta_est_vec, d_i_max, m_bar, n_sen, e_max, e_i0_norm=0.0):
    """Multi-agent bound with estimator disturbances and inter-agent error ``e_max``."""
    _check_rho(rho_c)
    delta = float(np.linalg.norm(np.asarray(delta_est_vec, dtype=np.float64)))
    for name, val in (("d_i_max", d_i_max), ("m_bar", m_bar), ("e_max", e_max), ("norm_L", norm_L)):
        if val < 0:
            raise ValueError(f"{name} must be non-negative")
    return m_c * e_i0_norm + m_c / (1.0 - rho_c) * (norm_L * delta + d_i_max + m_bar * n_sen * e_max)


def constructive_e_max(certificate, e_ij0_norm, d_max_pair):
    """Inter-agent error bound from a passing subset certificate.

    In the P-norm every subset matrix contracts by ``sqrt(contraction)``
    and the pair disturbance ``d_i - d_j`` is at most ``d_max_pair`` in the
    2-norm, so ``||e_ij(k)||_P <= ||e_ij(0)||_P + sqrt(lmax) d / (1 - c)``.
    Converting back to the 2-norm costs ``sqrt(cond(P))``.
    """
    if not certificate.passed:
        raise ValueError("inter-agent error bound needs a passing subset certificate")
    c = np.sqrt(certificate.contraction)
    if c >= 1.0:
        raise ValueError(f"P-weighted contraction {c:.6g} >= 1")
    evals = np.linalg.eigvalsh(certificate.P)
    cond = evals[-1] / evals[0]
    return float(np.sqrt(cond) * (e_ij0_norm + d_max_pair / (1.0 - c)))


def epsilon_c_max(m_c, rho_c, norm_I_LC, norm_L, v_max, w_max, eps_c0_norm=0.0):
    _check_rho(rho_c)
    return m_c * eps_c0_norm + m_c / (1.0 - rho_c) * (norm_I_LC * v_max + norm_L * w_max)


def corollary_bounds(kind, e_i_max, m_c=None, rho_c=None, norm_I_LC=None, norm_L=None,
                     v_max=None, w_max=None, eps_c0_norm=0.0, zero_mean=False):
    """Bound on the agent estimation error.

    ``deterministic`` bounds ``sup_k ||eps_i(k)||`` for bounded noise;
    ``stochastic`` bounds ``||E[eps_i(k)]||`` for zero-mean noise.
    """
    if kind == "deterministic":
        needed = dict(m_c=m_c, rho_c=rho_c, norm_I_LC=norm_I_LC, norm_L=norm_L, v_max=v_max, w_max=w_max)
        missing = [k for k, val in needed.items() if val is None]
        if missing:
            raise ValueError(f"deterministic bound needs {missing}")
        return epsilon_c_max(m_c, rho_c, norm_I_LC, norm_L, v_max, w_max, eps_c0_norm) + e_i_max
    if kind == "stochastic":
        if not zero_mean:
            raise ValueError("stochastic bound requires zero-mean noise (pass zero_mean=True)")
        return e_i_max
    raise ValueError(f"unknown bound kind {kind!r}")


@dataclass
class BoundReport:
    m_c: float
    rho_c: float
    norm_L: float
    norm_I_LC: float
    m_bar: float
    n_sen: int
    delta_est: list
    e_i0_norm: float
    theorem1_e_max: float
    d_max: list = None
    e_ij0_norm: float = None
    e_max: float = None
    theorem2_e_max: list = None
    v_max: float = None
    w_max: float = None
    epsilon_c_max: float = None
    corollary1_bound: list = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _noise_sup(spec):
    """Worst-case 2-norm of a noise source, ``inf`` for Gaussian."""
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "uniform":
        return float(np.linalg.norm(spec.bound))
    if spec.kind == "step_sequence":
        return max((float(np.linalg.norm(vec)) for _, _, vec in spec.windows), default=0.0)
    return float("inf")


def bound_report(scenario, certificate=None, e_i0_norm=None, e_ij0_norm=None):
    """Evaluate every applicable bound for ``scenario`` from its parameters."""
    model = scenario.model
    gain = scenario.observer_gain()
    m_c, rho_c = decay_constants(observer_matrix(model, gain))
    norm_L = mat_norm(gain.L)
    norm_I_LC = mat_norm(np.eye(model.n) - gain.L @ model.C)
    delta = list(scenario.measurement_trigger.delta_est)
    if scenario.measurement_trigger.norm == "inf":
        # ||r||_2 <= sqrt(dim) ||r||_inf per sensor block
        delta = [d * np.sqrt(b - a) for d, (a, b) in zip(delta, model.sensor_partition)]
    d0 = scenario.disturbance.realize(0, scenario.n_agents, model.n)[0]
    if e_i0_norm is None:
        e_i0_norm = float(max(np.linalg.norm(d) for d in d0))
    if e_ij0_norm is None:
        e_ij0_norm = float(max(np.linalg.norm(a - b) for a in d0 for b in d0))
    report = BoundReport(
        m_c=m_c, rho_c=rho_c, norm_L=norm_L, norm_I_LC=norm_I_LC,
        m_bar=m_bar(model, gain), n_sen=model.n_sensors, delta_est=delta,
        e_i0_norm=e_i0_norm,
        theorem1_e_max=theorem1_bound(m_c, rho_c, norm_L, float(np.linalg.norm(delta)), e_i0_norm),
    )
    if scenario.measurement_trigger.norm == "inf":
        report.notes.append("inf-norm thresholds converted to 2-norm bounds via sqrt(block size)")
    if scenario.control and scenario.input_mode == "event":
        report.notes.append("event-triggered inputs: no certified bound, only empirical checks")
    if scenario.drop.droppable("measurement"):
        report.notes.append("packet drops act as unbounded estimator disturbances; bounds below ignore them")
    if certificate is None and model.n_sensors <= MAX_SUBSET_SENSORS:
        certificate = check_lemma1(model, gain, scenario.lyapunov_matrix())
    if scenario.reset_period > 0:
        report.notes.append("synchronous resets bound the error but no closed-form constant is given")
    elif certificate is not None and certificate.passed:
        d_max = [scenario.disturbance.bound(i) for i in range(scenario.n_agents)]
        pair = max(a + b for a in d_max for b in d_max)
        e_max = constructive_e_max(certificate, e_ij0_norm, pair)
        report.d_max = d_max
        report.e_ij0_norm = e_ij0_norm
        report.e_max = e_max
        report.theorem2_e_max = [
            theorem2_bound(m_c, rho_c, norm_L, delta, d, report.m_bar, model.n_sensors, e_max, e_i0_norm)
            for d in d_max]
    v_max = _noise_sup(scenario.process_noise)
    w_max = _noise_sup(scenario.measurement_noise)
    report.v_max, report.w_max = v_max, w_max
    if np.isfinite(v_max) and np.isfinite(w_max):
        eps0 = float(np.linalg.norm(scenario.x0 - scenario.xhat0))
        report.epsilon_c_max = epsilon_c_max(m_c, rho_c, norm_I_LC, norm_L, v_max, w_max, eps0)
        per_agent = report.theorem2_e_max or [report.theorem1_e_max] * scenario.n_agents
        report.corollary1_bound = [report.epsilon_c_max + e for e in per_agent]
    return report


# -- trace consistency checks -----------------------------------------------

def _rel_excess(lhs, rhs, tol):
    """Largest ``|lhs - rhs|`` in units of ``tol * (1 + |rhs|)``."""
    err = np.abs(lhs - rhs)
    scale = tol * (1.0 + np.abs(rhs))
    return float(np.max(err / scale)) if err.size else 0.0


def check_inter_agent_recursion(model, gain, trace, pairs=None, tol=1e-10):
    """Step-by-step check of the inter-agent error recursion.

    ``e_ij(k) = At_{I(k)} e_ij(k-1) + d_i(k) - d_j(k)`` using pre-reset
    estimates at ``k`` and post-reset estimates at ``k - 1``. In event-input
    mode the prediction mismatch ``B (u_hat_i - u_hat_j)`` is carried along.
    Returns the worst normalized residual; ``<= 1`` means pass.
    """
    N = trace.n_agents
    if pairs is None:
        pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    worst = 0.0
    cache = {}
    I = np.eye(model.n)
    for k in range(1, trace.horizon + 1):
        J = tuple(np.flatnonzero(trace.meas_trigger[k]))
        if J not in cache:
            S = I.copy()
            for l in J:
                S -= gain.block(l) @ model.C_block(l)
            cache[J] = S
        S = cache[J]
        for i, j in pairs:
            prev = trace.x_filt[k - 1, i] - trace.x_filt[k - 1, j]
            pred = model.A @ prev
            if trace.input_mode == "event":
                pred = pred + model.B @ (trace.u_hat[k - 1, i] - trace.u_hat[k - 1, j])
            rhs = S @ pred + trace.d_eff[k, i] - trace.d_eff[k, j]
            lhs = trace.x_filt_pre[k, i] - trace.x_filt_pre[k, j]
            worst = max(worst, _rel_excess(lhs, rhs, tol))
    return worst


def check_central_difference(model, gain, trace, tol=1e-10):
    """Check the decomposition of ``e_i = xc - x_i`` into its input terms.

    ``e_i(k) = (I-LC)[A e_i(k-1) + B(u - u_src_i)] + sum_{l in I^c}
    L_l [innov_l - C_l (A e_{i,a(l)}(k-1) + B(u_src_i - u_src_a(l)))] - d_i``
    with ``a(l)`` the owner of sensor ``l`` and ``innov_l`` its own
    innovation. Returns the worst normalized residual.
    """
    M = np.eye(model.n) - gain.L @ model.C
    worst = 0.0
    for k in range(1, trace.horizon + 1):
        silent = np.flatnonzero(~trace.meas_trigger[k])
        for i in range(trace.n_agents):
            u_src = trace.u_hat[k - 1] if trace.input_mode == "event" else np.repeat(trace.u[k - 1][None], trace.n_agents, 0)
            e_prev = trace.xc[k - 1] - trace.x_filt[k - 1, i]
            rhs = M @ (model.A @ e_prev + model.B @ (trace.u[k - 1] - u_src[i])) - trace.d_eff[k, i]
            for l in silent:
                a = trace.sensor_owner[l]
                lo, hi = model.sensor_partition[l]
                innov = trace.y[k, lo:hi] - model.C[lo:hi] @ trace.x_pred[k, a]
                e_ia = trace.x_filt[k - 1, i] - trace.x_filt[k - 1, a]
                rhs = rhs + gain.block(l) @ (
                    innov - model.C[lo:hi] @ (model.A @ e_ia + model.B @ (u_src[i] - u_src[a])))
            lhs = trace.xc[k] - trace.x_filt_pre[k, i]
            worst = max(worst, _rel_excess(lhs, rhs, tol))
    return worst


def check_silent_innovations(trace, delta_est):
    """Every non-transmitting sensor had innovation strictly below its threshold."""
    delta = np.asarray(delta_est, dtype=np.float64)
    silent = ~trace.meas_trigger[1:]
    return bool(np.all(trace.innovation[1:][silent] < np.broadcast_to(delta, silent.shape)[silent]))


def check_central_error_recursion(model, gain, trace, tol=1e-10):
    """``eps_c(k) = (I-LC)A eps_c(k-1) + (I-LC) v(k-1) - L w(k)``."""
    M = np.eye(model.n) - gain.L @ model.C
    eps = trace.central_error()
    rhs = (eps[:-1] @ (M @ model.A).T) + trace.v[:-1] @ M.T - trace.w[1:] @ gain.L.T
    return _rel_excess(eps[1:], rhs, tol)


@dataclass
class ClosedLoopReport:
    recursion_residual: float
    recursion_ok: bool
    max_state_norm: float
    spectral_radius_cl: float

    def to_dict(self):
        return asdict(self)


def closed_loop_check(model, controller_gain, trace, tol=1e-10):
    """Check ``x(k) = (A+BF) x(k-1) - sum_i B_i F_i eps_i(k-1) + v(k-1)``.

    ``eps_i`` is the estimation error of the agent computing input group
    ``i``, taken at the estimate its control was computed from.
    """
    if not trace.control:
        raise ValueError("closed_loop_check needs a run with control enabled")
    F = controller_gain.F
    Acl = model.A + model.B @ F
    rhs = trace.x[:-1] @ Acl.T + trace.v[:-1]
    for j, (lo, hi) in enumerate(model.input_partition):
        a = trace.input_owner[j]
        eps = trace.x[:-1] - trace.x_filt_pre[:-1, a]
        rhs = rhs - eps @ (model.B[:, lo:hi] @ F[lo:hi]).T
    residual = _rel_excess(trace.x[1:], rhs, tol)
    return ClosedLoopReport(
        recursion_residual=residual,
        recursion_ok=residual <= 1.0,
        max_state_norm=float(np.max(np.linalg.norm(trace.x, axis=1))),
        spectral_radius_cl=spectral_radius(Acl),
    )


def consistency_checks(scenario, trace, tol=1e-10):
    """All per-step invariants a run must satisfy; returns a dict of results."""
    model = scenario.model
    gain = scenario.observer_gain()
    out = {
        "silent_innovations_below_threshold": check_silent_innovations(
            trace, scenario.measurement_trigger.delta_est),
        "inter_agent_recursion_residual": check_inter_agent_recursion(model, gain, trace, tol=tol),
        "central_difference_residual": check_central_difference(model, gain, trace, tol=tol),
        "central_error_residual": check_central_error_recursion(model, gain, trace, tol=tol),
    }
    if trace.control:
        out["closed_loop_residual"] = closed_loop_check(
            model, scenario.controller_gain(), trace, tol=tol).recursion_residual
    out["ok"] = bool(out["silent_innovations_below_threshold"]) and all(
        v <= 1.0 for k, v in out.items() if k.endswith("_residual"))
    return out
