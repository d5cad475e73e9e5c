"""Compiled inner loops of the operator-splitting QP solver.

All arrays passed here live in the scaled problem space:
P_s = c D P D, q_s = c D q, A_s = E A D, l_s = E l, u_s = E u.
"""

import numpy as np
from numba import njit

from agingmpc.qp._ldl import factor, solve_inplace

# KKT entry kinds
K_P = 0
K_PDIAG = 1
K_A = 2
K_CDIAG = 3

# constraint kinds
C_INEQ = 0
C_EQ = 1
C_FREE = 2

RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_FACTOR = 1e3

ST_SOLVED = 0
ST_MAX_ITER = 1
ST_PRIMAL_INF = 2
ST_FACTOR_FAIL = 3

# active rows released while searching for sign-correct polish multipliers
MAX_POLISH_DROPS = 8


@njit(cache=True)
def sym_upper_matvec(n, Pp, Pi, Px, x, out):
    for i in range(n):
        out[i] = 0.0
    for j in range(n):
        xj = x[j]
        for k in range(Pp[j], Pp[j + 1]):
            i = Pi[k]
            v = Px[k]
            out[i] += v * xj
            if i != j:
                out[j] += v * x[i]


@njit(cache=True)
def csc_matvec(m, n, Ap, Ai, Ax, x, out):
    for i in range(m):
        out[i] = 0.0
    for j in range(n):
        xj = x[j]
        for k in range(Ap[j], Ap[j + 1]):
            out[Ai[k]] += Ax[k] * xj


@njit(cache=True)
def csc_tmatvec(n, Ap, Ai, Ax, y, out):
    for j in range(n):
        s = 0.0
        for k in range(Ap[j], Ap[j + 1]):
            s += Ax[k] * y[Ai[k]]
        out[j] = s


@njit(cache=True)
def inf_norm(v):
    r = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > r:
            r = a
    return r


@njit(cache=True)
def fill_kkt(Kx, kind, src, Px, Ax, Ai, diag_shift, rho_vec, active, polish_mode, delta):
    """ADMM matrix [[P + sigma I, A'], [A, -diag(1/rho)]] or the polishing matrix."""
    for k in range(Kx.shape[0]):
        t = kind[k]
        s = src[k]
        if t == K_P:
            Kx[k] = Px[s]
        elif t == K_PDIAG:
            Kx[k] = Px[s] + diag_shift
        elif t == K_A:
            if polish_mode == 0 or active[Ai[s]] != 0:
                Kx[k] = Ax[s]
            else:
                Kx[k] = 0.0
        else:
            if polish_mode == 0:
                Kx[k] = -1.0 / rho_vec[s]
            elif active[s] != 0:
                Kx[k] = -delta
            else:
                Kx[k] = -1.0


@njit(cache=True)
def set_rho_vec(rho, ckind, rho_vec):
    for i in range(rho_vec.shape[0]):
        if ckind[i] == C_EQ:
            rho_vec[i] = RHO_EQ_FACTOR * rho
        elif ckind[i] == C_FREE:
            rho_vec[i] = RHO_MIN
        else:
            rho_vec[i] = rho


@njit(cache=True)
def _permuted_solve(nk, perm, Lp, Li, Lx, Ldinv, rhs, work, out):
    for k in range(nk):
        work[k] = rhs[perm[k]]
    solve_inplace(nk, Lp, Li, Lx, Ldinv, work)
    for k in range(nk):
        out[perm[k]] = work[k]


@njit(cache=True)
def _residuals(n, m, Pp, Pi, Px, q, Ap, Ai, Ax, D, E, c, x, z, y, ax, px, aty,
               eps_abs, eps_rel):
    """Unscaled residual norms and a componentwise convergence test.

    Row i passes when |Ax - z|_i <= eps_abs + eps_rel max(|Ax|_i, |z|_i) and
    column j when |Px + q + A'y|_j <= eps_abs + eps_rel max(|Px|_j, |A'y|_j, |q|_j),
    all in unscaled units. Also returns scaled normalized residuals for the
    step-size update.
    """
    csc_matvec(m, n, Ap, Ai, Ax, x, ax)
    sym_upper_matvec(n, Pp, Pi, Px, x, px)
    csc_tmatvec(n, Ap, Ai, Ax, y, aty)
    ok = True
    prim = 0.0
    prim_s = 0.0
    ax_s = 0.0
    z_s = 0.0
    for i in range(m):
        r = ax[i] - z[i]
        ar = abs(r)
        a = ar / E[i]
        if a > prim:
            prim = a
        if ar > prim_s:
            prim_s = ar
        aax = abs(ax[i])
        az = abs(z[i])
        if aax > ax_s:
            ax_s = aax
        if az > z_s:
            z_s = az
        if a > eps_abs + eps_rel * max(aax, az) / E[i]:
            ok = False
    cinv = 1.0 / c
    dual = 0.0
    dual_s = 0.0
    px_s = 0.0
    aty_s = 0.0
    q_s = 0.0
    for j in range(n):
        r = px[j] + q[j] + aty[j]
        ar = abs(r)
        a = cinv * ar / D[j]
        if a > dual:
            dual = a
        if ar > dual_s:
            dual_s = ar
        apx = abs(px[j])
        aaty = abs(aty[j])
        aq = abs(q[j])
        if apx > px_s:
            px_s = apx
        if aaty > aty_s:
            aty_s = aaty
        if aq > q_s:
            q_s = aq
        if a > eps_abs + eps_rel * cinv * max(apx, max(aaty, aq)) / D[j]:
            ok = False
    prim_norm = prim_s / (max(ax_s, z_s) + 1e-30)
    dual_norm = dual_s / (max(px_s, max(aty_s, q_s)) + 1e-30)
    return prim, dual, ok, prim_norm, dual_norm


@njit(cache=True)
def _primal_infeasible(n, m, Ap, Ai, Ax, l, u, D, E, dy, tmp, eps):
    """Check whether dy certifies primal infeasibility (unscaled test)."""
    norm_dy = 0.0
    for i in range(m):
        a = abs(dy[i] * E[i])
        if a > norm_dy:
            norm_dy = a
    if norm_dy <= eps:
        return False
    support = 0.0
    for i in range(m):
        d = dy[i] * E[i] / norm_dy
        if d > 0.0:
            if np.isinf(u[i]):
                if d > eps:
                    return False
            else:
                support += u[i] / E[i] * d
        elif d < 0.0:
            if np.isinf(l[i]):
                if -d > eps:
                    return False
            else:
                support += l[i] / E[i] * d
    if support >= -eps:
        return False
    csc_tmatvec(n, Ap, Ai, Ax, dy, tmp)
    for j in range(n):
        if abs(tmp[j] / D[j]) / norm_dy > eps:
            return False
    return True


@njit(cache=True)
def _polish(n, m, Pp, Pi, Px, q, Ap, Ai, Ax, l, u, D, E, c, ckind,
            Kp, Ki, Kx, kind, src, perm, Lp, Li, Lx, Ld, Ldinv, Lnz, parent,
            markers, yidx, elim, nxt, yvals,
            x, z, y, delta, refine, eps_abs, eps_rel,
            xp, zp, yp, active, rhs, sol, corr, work, ax, px, aty, on_bound):
    """Solve the equality-constrained problem on the guessed active set.

    Returns (ok, prim, dual). ``ok`` requires the polished point to meet
    tolerances and to have multipliers of the correct sign. At a degenerate
    vertex the multipliers are not unique; the most wrong-signed active
    inequality is then released and the system re-solved, a bounded number
    of times. With ``on_bound`` set, rows whose z sits exactly on a bound are
    also guessed active (for a supplied point at a degenerate vertex).
    """
    for i in range(m):
        if ckind[i] == C_EQ:
            active[i] = 2
        elif z[i] - l[i] < -y[i] or (on_bound != 0 and z[i] <= l[i]):
            active[i] = -1
        elif u[i] - z[i] < y[i] or (on_bound != 0 and z[i] >= u[i]):
            active[i] = 1
        else:
            active[i] = 0
    prim = 0.0
    dual = 0.0
    for _ in range(MAX_POLISH_DROPS + 1):
        ok, prim, dual, worst = _polish_once(
            n, m, Pp, Pi, Px, q, Ap, Ai, Ax, l, u, D, E, c,
            Kp, Ki, Kx, kind, src, perm, Lp, Li, Lx, Ld, Ldinv, Lnz, parent,
            markers, yidx, elim, nxt, yvals, delta, refine, eps_abs, eps_rel,
            xp, zp, yp, active, rhs, sol, corr, work, ax, px, aty, x)
        if ok:
            return True, prim, dual
        if worst < 0:
            return False, prim, dual
        active[worst] = 0
    return False, prim, dual


@njit(cache=True)
def _polish_once(n, m, Pp, Pi, Px, q, Ap, Ai, Ax, l, u, D, E, c,
                 Kp, Ki, Kx, kind, src, perm, Lp, Li, Lx, Ld, Ldinv, Lnz, parent,
                 markers, yidx, elim, nxt, yvals, delta, refine, eps_abs, eps_rel,
                 xp, zp, yp, active, rhs, sol, corr, work, ax, px, aty, x):
    """One polishing solve. Returns (ok, prim, dual, worst) where ``worst`` is
    the active row with the most wrong-signed multiplier, or -1 when the
    failure is not a sign failure."""
    nk = n + m
    rho_dummy = np.empty(0)
    fill_kkt(Kx, kind, src, Px, Ax, Ai, delta, rho_dummy, active, 1, delta)
    if factor(nk, Kp, Ki, Kx, Lp, Li, Lx, Ld, Ldinv, Lnz, parent,
              markers, yidx, elim, nxt, yvals) < 0:
        return False, 0.0, 0.0, -1
    # the first solve is a proximal step around x, so that along directions
    # the active set leaves free the result stays near the current point
    for j in range(n):
        rhs[j] = -q[j] + delta * x[j]
    for i in range(m):
        a = active[i]
        if a == -1:
            rhs[n + i] = l[i]
        elif a == 0:
            rhs[n + i] = 0.0
        else:
            rhs[n + i] = u[i]
    _permuted_solve(nk, perm, Lp, Li, Lx, Ldinv, rhs, work, sol)
    for j in range(n):
        rhs[j] = -q[j]
    for _ in range(refine):
        # residual of the unregularized system
        for j in range(n):
            xp[j] = sol[j]
        for i in range(m):
            yp[i] = sol[n + i] if active[i] != 0 else 0.0
        sym_upper_matvec(n, Pp, Pi, Px, xp, px)
        csc_tmatvec(n, Ap, Ai, Ax, yp, aty)
        csc_matvec(m, n, Ap, Ai, Ax, xp, ax)
        for j in range(n):
            corr[j] = rhs[j] - (px[j] + aty[j])
        for i in range(m):
            if active[i] != 0:
                corr[n + i] = rhs[n + i] - ax[i]
            else:
                corr[n + i] = sol[n + i]
        _permuted_solve(nk, perm, Lp, Li, Lx, Ldinv, corr, work, corr)
        for k in range(nk):
            sol[k] += corr[k]
    for j in range(n):
        xp[j] = sol[j]
    for i in range(m):
        yp[i] = sol[n + i] if active[i] != 0 else 0.0
    csc_matvec(m, n, Ap, Ai, Ax, xp, ax)
    for i in range(m):
        v = ax[i]
        if v < l[i]:
            v = l[i]
        elif v > u[i]:
            v = u[i]
        zp[i] = v
    prim, dual, ok, _, _ = _residuals(
        n, m, Pp, Pi, Px, q, Ap, Ai, Ax, D, E, c, xp, zp, yp, ax, px, aty,
        eps_abs, eps_rel)
    if not ok:
        return False, prim, dual, -1
    # multiplier signs: y <= 0 on active lower bounds, y >= 0 on active upper bounds
    y_norm = 0.0
    for i in range(m):
        a = abs(yp[i] * E[i] / c)
        if a > y_norm:
            y_norm = a
    tol = eps_abs + eps_rel * y_norm
    worst = -1
    worst_val = tol
    for i in range(m):
        yu = yp[i] * E[i] / c
        bad = 0.0
        if active[i] == -1:
            bad = yu
        elif active[i] == 1:
            bad = -yu
        if bad > worst_val:
            worst_val = bad
            worst = i
    if worst >= 0:
        return False, prim, dual, worst
    return True, prim, dual, -1


@njit(cache=True)
def admm(n, m, Pp, Pi, Px, q, Ap, Ai, Ax, l, u, D, E, c, ckind,
         Kp, Ki, kind, src, perm, Lnz, parent,
         x, z, y, rho, settings_f, settings_i, info):
    """Run the splitting iterations in place on (x, z, y).

    settings_f = [sigma, alpha, eps_abs, eps_rel, eps_pinf, adapt_tol, delta]
    settings_i = [max_iter, adaptive, adapt_interval, polish, polish_interval, refine,
                  free_rho_updates]
    info (out) = [status, iterations, prim, dual, rho, polished]
    """
    sigma = settings_f[0]
    alpha = settings_f[1]
    eps_abs = settings_f[2]
    eps_rel = settings_f[3]
    eps_pinf = settings_f[4]
    adapt_tol = settings_f[5]
    delta = settings_f[6]
    max_iter = settings_i[0]
    adaptive = settings_i[1]
    adapt_interval = settings_i[2]
    polish = settings_i[3]
    polish_interval = settings_i[4]
    refine = settings_i[5]
    free_rho_updates = settings_i[6]
    rho_updates = 0
    next_adapt = adapt_interval
    adapt_gap = adapt_interval
    # periodic polish attempts back off geometrically after each failure
    next_polish = polish_interval
    polish_gap = polish_interval

    nk = n + m
    nnz_l = 0
    for i in range(nk):
        nnz_l += Lnz[i]
    nnz_l = max(nnz_l, 1)
    Lp = np.empty(nk + 1, dtype=np.int64)
    Li = np.empty(nnz_l, dtype=np.int64)
    Lx = np.empty(nnz_l)
    Ld = np.empty(nk)
    Ldinv = np.empty(nk)
    markers = np.empty(nk, dtype=np.int64)
    yidx = np.empty(nk, dtype=np.int64)
    elim = np.empty(nk, dtype=np.int64)
    nxt = np.empty(nk, dtype=np.int64)
    yvals = np.empty(nk)
    Kx = np.empty(Kp[nk])
    # separate storage for polishing so the iteration factor survives
    Lp2 = np.empty(nk + 1, dtype=np.int64)
    Li2 = np.empty(nnz_l, dtype=np.int64)
    Lx2 = np.empty(nnz_l)
    Ld2 = np.empty(nk)
    Ldinv2 = np.empty(nk)
    Kx2 = np.empty(Kp[nk])

    rho_vec = np.empty(m)
    active = np.zeros(m, dtype=np.int64)
    rhs = np.empty(nk)
    sol = np.empty(nk)
    corr = np.empty(nk)
    work = np.empty(nk)
    xt = np.empty(n)
    zt = np.empty(m)
    x_prev = np.empty(n)
    y_prev = np.empty(m)
    dy = np.empty(m)
    ax = np.empty(m)
    px = np.empty(n)
    aty = np.empty(n)
    tmp = np.empty(n)
    xp = np.empty(n)
    zp = np.empty(m)
    yp = np.empty(m)

    set_rho_vec(rho, ckind, rho_vec)
    fill_kkt(Kx, kind, src, Px, Ax, Ai, sigma, rho_vec, active, 0, delta)
    if factor(nk, Kp, Ki, Kx, Lp, Li, Lx, Ld, Ldinv, Lnz, parent,
              markers, yidx, elim, nxt, yvals) < 0:
        info[0] = ST_FACTOR_FAIL
        info[1] = 0
        info[4] = rho
        return

    status = ST_MAX_ITER
    prim = np.inf
    dual = np.inf
    polished = 0
    it = 0
    if polish != 0 and polish_interval == 0:
        # polish the supplied point only
        ok, prim, dual = _polish(
            n, m, Pp, Pi, Px, q, Ap, Ai, Ax, l, u, D, E, c, ckind,
            Kp, Ki, Kx2, kind, src, perm, Lp2, Li2, Lx2, Ld2, Ldinv2,
            Lnz, parent, markers, yidx, elim, nxt, yvals,
            x, z, y, delta, refine, eps_abs, eps_rel,
            xp, zp, yp, active, rhs, sol, corr, work, ax, px, aty, 1)
        if ok:
            for j in range(n):
                x[j] = xp[j]
            for i in range(m):
                z[i] = zp[i]
                y[i] = yp[i]
            polished = 1
            status = ST_SOLVED
        max_iter = 0
    for it in range(1, max_iter + 1):
        for j in range(n):
            x_prev[j] = x[j]
            rhs[j] = sigma * x[j] - q[j]
        for i in range(m):
            y_prev[i] = y[i]
            rhs[n + i] = z[i] - y[i] / rho_vec[i]
        _permuted_solve(nk, perm, Lp, Li, Lx, Ldinv, rhs, work, sol)
        for j in range(n):
            xt[j] = sol[j]
            x[j] = alpha * xt[j] + (1.0 - alpha) * x_prev[j]
        for i in range(m):
            zt[i] = z[i] + (sol[n + i] - y[i]) / rho_vec[i]
            zr = alpha * zt[i] + (1.0 - alpha) * z[i]
            v = zr + y[i] / rho_vec[i]
            if v < l[i]:
                v = l[i]
            elif v > u[i]:
                v = u[i]
            z[i] = v
            y[i] = y[i] + rho_vec[i] * (zr - v)
            dy[i] = y[i] - y_prev[i]

        prim, dual, converged, prim_norm, dual_norm = _residuals(
            n, m, Pp, Pi, Px, q, Ap, Ai, Ax, D, E, c, x, z, y, ax, px, aty,
            eps_abs, eps_rel)

        if converged or (polish != 0 and it >= next_polish):
            if polish != 0:
                ok, pprim, pdual = _polish(
                    n, m, Pp, Pi, Px, q, Ap, Ai, Ax, l, u, D, E, c, ckind,
                    Kp, Ki, Kx2, kind, src, perm, Lp2, Li2, Lx2, Ld2, Ldinv2,
                    Lnz, parent, markers, yidx, elim, nxt, yvals,
                    x, z, y, delta, refine, eps_abs, eps_rel,
                    xp, zp, yp, active, rhs, sol, corr, work, ax, px, aty, 0)
                if ok:
                    for j in range(n):
                        x[j] = xp[j]
                    for i in range(m):
                        z[i] = zp[i]
                        y[i] = yp[i]
                    prim = pprim
                    dual = pdual
                    polished = 1
                    status = ST_SOLVED
                    break
                if it >= next_polish:
                    polish_gap *= 2
                    next_polish = it + polish_gap
            if converged:
                status = ST_SOLVED
                break

        if _primal_infeasible(n, m, Ap, Ai, Ax, l, u, D, E, dy, tmp, eps_pinf):
            status = ST_PRIMAL_INF
            for i in range(m):
                y[i] = dy[i]
            break

        if adaptive != 0 and it >= next_adapt:
            rho_new = rho * np.sqrt(prim_norm / (dual_norm + 1e-30))
            rho_new = min(max(rho_new, RHO_MIN), RHO_MAX)
            if rho_new > rho * adapt_tol or rho_new < rho / adapt_tol:
                rho = rho_new
                rho_updates += 1
                # after the free updates the interval doubles, so rho settles
                if rho_updates >= free_rho_updates:
                    adapt_gap *= 2
                set_rho_vec(rho, ckind, rho_vec)
                fill_kkt(Kx, kind, src, Px, Ax, Ai, sigma, rho_vec, active, 0, delta)
                if factor(nk, Kp, Ki, Kx, Lp, Li, Lx, Ld, Ldinv, Lnz, parent,
                          markers, yidx, elim, nxt, yvals) < 0:
                    status = ST_FACTOR_FAIL
                    break
            next_adapt = it + adapt_gap

    info[0] = status
    info[1] = it
    info[2] = prim
    info[3] = dual
    info[4] = rho
    info[5] = polished
