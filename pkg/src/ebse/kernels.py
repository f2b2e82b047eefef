"""Numeric inner loops.

Every function here is valid both as numba-compiled code and as plain
numpy; see :mod:`ebse._jit`. Arrays passed in must be C-contiguous float64
(or int64 / bool where noted). Nothing in this module validates its inputs.
"""
import numpy as np

from ._jit import kernel

RICCATI_OK = 0
RICCATI_MAXITER = 1
RICCATI_DIVERGED = 2


@kernel
def vector_norm(r, inf_norm):
    if r.size == 0:
        return 0.0
    if inf_norm:
        return np.max(np.abs(r))
    return np.sqrt(np.sum(r * r))


@kernel
def power_ratio_sup(M, rho, max_k):
    """Return ``(sup_k ||M^k|| / rho^k, K)`` using the 2-norm.

    ``K`` is the first ``k >= 1`` with ``||M^K|| <= rho^K``. Past that point
    submultiplicativity gives ``||M^(aK+b)|| / rho^(aK+b) <= ratio(b)``, so
    the maximum over ``0..K`` is the supremum over all ``k``. Returns
    ``K = -1`` if no such ``K <= max_k`` exists.
    """
    n = M.shape[0]
    S = np.ascontiguousarray(M / rho)
    Q = np.eye(n)
    best = 1.0
    for k in range(1, max_k + 1):
        Q = Q @ S
        r = np.linalg.norm(Q, 2)
        if r > best:
            best = r
        if r <= 1.0:
            return best, k
    return best, -1


@kernel
def power_norms(M, count):
    """``||M^k||_2`` for ``k = 0..count-1``."""
    n = M.shape[0]
    out = np.empty(count)
    Q = np.eye(n)
    for k in range(count):
        out[k] = np.linalg.norm(Q, 2)
        Q = Q @ M
    return out


@kernel
def riccati_filter(A, C, Q, R, tol, max_iter):
    """Fixed-point iteration of the prediction-covariance Riccati map.

    ``P <- A (P - P C' (C P C' + R)^-1 C P) A' + Q`` starting from ``Q``.
    Returns ``(P, iterations, status)``.
    """
    P = Q.copy()
    At = np.ascontiguousarray(A.T)
    Ct = np.ascontiguousarray(C.T)
    for it in range(1, max_iter + 1):
        S = C @ P @ Ct + R
        K = np.linalg.solve(S, C @ P)
        Pn = A @ (P - P @ Ct @ K) @ At + Q
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)) or np.max(np.abs(Pn)) > 1e150:
            return Pn, it, RICCATI_DIVERGED
        diff = np.max(np.abs(Pn - P))
        P = np.ascontiguousarray(Pn)
        if diff < tol:
            return P, it, RICCATI_OK
    return P, max_iter, RICCATI_MAXITER


@kernel
def riccati_lqr(A, B, Q, R, tol, max_iter):
    """Fixed-point iteration of the regulator Riccati map, starting from ``Q``.

    ``P <- Q + A' P A - A' P B (R + B' P B)^-1 B' P A``.
    """
    P = Q.copy()
    At = np.ascontiguousarray(A.T)
    Bt = np.ascontiguousarray(B.T)
    for it in range(1, max_iter + 1):
        S = R + Bt @ P @ B
        K = np.linalg.solve(S, Bt @ P @ A)
        Pn = Q + At @ P @ A - At @ P @ B @ K
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)) or np.max(np.abs(Pn)) > 1e150:
            return Pn, it, RICCATI_DIVERGED
        diff = np.max(np.abs(Pn - P))
        P = np.ascontiguousarray(Pn)
        if diff < tol:
            return P, it, RICCATI_OK
    return P, max_iter, RICCATI_MAXITER


@kernel
def subset_lmi_scan(A, LC, P, P_inv_half):
    """Scan all sensor subsets ``J`` encoded as bit masks.

    For each mask returns the largest eigenvalue of ``At' P At - P`` and of
    ``P^-1/2 At' P At P^-1/2`` where ``At = (I - sum_{l in J} LC[l]) A``.
    """
    n_sen = LC.shape[0]
    n = A.shape[0]
    total = 1 << n_sen
    lmi_max = np.empty(total)
    contraction = np.empty(total)
    eye = np.eye(n)
    for mask in range(total):
        S = eye.copy()
        for l in range(n_sen):
            if (mask >> l) & 1:
                S -= LC[l]
        At = S @ A
        G = np.ascontiguousarray(At.T) @ P @ At
        M = G - P
        M = 0.5 * (M + M.T)
        lmi_max[mask] = np.linalg.eigvalsh(M)[-1]
        H = P_inv_half @ G @ P_inv_half
        H = 0.5 * (H + H.T)
        contraction[mask] = np.linalg.eigvalsh(H)[-1]
    return lmi_max, contraction


@kernel
def trailing_mean(events, window):
    """Moving average over the last ``window`` rows, per column.

    Early rows average over the rows seen so far.
    """
    steps, cols = events.shape
    out = np.empty((steps, cols))
    acc = np.zeros(cols)
    for k in range(steps):
        acc += events[k]
        if k >= window:
            acc -= events[k - window]
        out[k] = acc / min(k + 1, window)
    return out


@kernel
def simulate_loop(A, B, C, Lt, F,
                  sens_lo, sens_hi, sens_owner, inp_lo, inp_hi, inp_owner,
                  delta_est, delta_ctrl, inf_norm_est, inf_norm_ctrl,
                  control, input_event, reset_period,
                  drop_prob, per_frame, meas_droppable, input_droppable,
                  x0, xhat0, v, w, drop_u, d_inj,
                  x, y, xc_pred, xc, xp, xf_pre, xf, innov, meas_trig,
                  meas_deliv, d_eff, u, u_hat, in_trig, in_deliv, reset):
    """Lock-step multi-agent simulation with a co-simulated central observer.

    Per step: plant, central observer, agent predictions, measurement
    triggers, bus delivery, agent updates, controls and input triggers,
    then the optional synchronous reset. ``Lt`` is the observer gain
    transposed so that sensor blocks are contiguous rows. Row 0 of every
    output holds the initial condition.
    """
    horizon = x.shape[0] - 1
    n_agents = xp.shape[1]
    n_sen = sens_lo.shape[0]
    n_in = inp_lo.shape[0]
    q = B.shape[1]
    L = np.ascontiguousarray(Lt.T)
    u_last = np.zeros(q)

    x[0] = x0
    y[0] = C @ x0 + w[0]
    xc_pred[0] = xhat0
    xc[0] = xhat0
    for i in range(n_agents):
        xp[0, i] = xhat0
        xf_pre[0, i] = xhat0 + d_inj[0, i]
        xf[0, i] = xf_pre[0, i]
        d_eff[0, i] = d_inj[0, i]

    for k in range(horizon + 1):
        if k > 0:
            x[k] = A @ x[k - 1] + B @ u[k - 1] + v[k - 1]
            y[k] = C @ x[k] + w[k]
            xc_pred[k] = A @ xc[k - 1] + B @ u[k - 1]
            xc[k] = xc_pred[k] + L @ (y[k] - C @ xc_pred[k])

            for i in range(n_agents):
                if input_event:
                    xp[k, i] = A @ xf[k - 1, i] + B @ u_hat[k - 1, i]
                else:
                    xp[k, i] = A @ xf[k - 1, i] + B @ u[k - 1]

            for l in range(n_sen):
                lo = sens_lo[l]
                hi = sens_hi[l]
                r = y[k, lo:hi] - C[lo:hi] @ xp[k, sens_owner[l]]
                innov[k, l] = vector_norm(r, inf_norm_est)
                meas_trig[k, l] = innov[k, l] >= delta_est[l]

            for i in range(n_agents):
                acc = xp[k, i].copy()
                dropped = np.zeros(acc.shape[0])
                for l in range(n_sen):
                    if not meas_trig[k, l]:
                        continue
                    lo = sens_lo[l]
                    hi = sens_hi[l]
                    contrib = (y[k, lo:hi] - C[lo:hi] @ xp[k, i]) @ Lt[lo:hi]
                    got = True
                    if meas_droppable and i != sens_owner[l]:
                        col = 0 if per_frame else i
                        got = drop_u[k, l, col] >= drop_prob
                    meas_deliv[k, l, i] = got
                    if got:
                        acc += contrib
                    else:
                        dropped -= contrib
                xf_pre[k, i] = acc + d_inj[k, i]
                d_eff[k, i] = d_inj[k, i] + dropped

        # controls from the updated (pre-reset) estimates
        if control:
            for j in range(n_in):
                lo = inp_lo[j]
                hi = inp_hi[j]
                u[k, lo:hi] = F[lo:hi] @ xf_pre[k, inp_owner[j]]
                if input_event:
                    change = vector_norm(u[k, lo:hi] - u_last[lo:hi], inf_norm_ctrl)
                    fire = change >= delta_ctrl[j]
                else:
                    fire = True
                in_trig[k, j] = fire
                if fire:
                    u_last[lo:hi] = u[k, lo:hi]
        for i in range(n_agents):
            if k > 0:
                u_hat[k, i] = u_hat[k - 1, i]
            for j in range(n_in):
                lo = inp_lo[j]
                hi = inp_hi[j]
                if i == inp_owner[j]:
                    if in_trig[k, j]:
                        in_deliv[k, j, i] = True
                    u_hat[k, i, lo:hi] = u[k, lo:hi]
                elif in_trig[k, j]:
                    got = True
                    if input_droppable and input_event:
                        col = 0 if per_frame else i
                        got = drop_u[k, n_sen + j, col] >= drop_prob
                    in_deliv[k, j, i] = got
                    if got:
                        u_hat[k, i, lo:hi] = u[k, lo:hi]

        if k > 0:
            if reset_period > 0 and k % reset_period == 0:
                reset[k] = True
                # first estimate plus mean deviation: exact on consensus
                dev = np.zeros(xf.shape[2])
                for i in range(n_agents):
                    dev += xf_pre[k, i] - xf_pre[k, 0]
                mean = xf_pre[k, 0] + dev / n_agents
                for i in range(n_agents):
                    xf[k, i] = mean
            else:
                for i in range(n_agents):
                    xf[k, i] = xf_pre[k, i]
