"""Hot inner loops: inverse-CDF categorical draws and tabular Gibbs chains.

Each kernel has a numba implementation and a numpy one with identical
results for identical inputs; :data:`symvae._jit.USE_JIT` picks which one the
public names refer to. Random numbers are always drawn by the caller from a
numpy ``Generator`` so both paths consume the same stream.
"""
import numpy as np

from . import _jit
from ._jit import njit


# --- inverse-CDF draws -------------------------------------------------------

def _draw_rows_np(cdf, u):
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1).astype(np.int64)


@njit
def _draw_rows_nb(cdf, u):
    n, k = cdf.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = 0
        while j < k - 1 and cdf[i, j] <= u[i]:
            j += 1
        out[i] = j
    return out


# --- tabular alternating chain ----------------------------------------------
# p_cdf[z, :] is the CDF of p(x|z); q_cdf[x, :] is the CDF of q(z|x).
# One sweep draws x then z; joint counts are recorded after each half-sweep.

def _tabular_chain_np(p_cdf, q_cdf, x0, z0, ux, uz, burn_in, thin):
    n_sweeps = ux.shape[0]
    nx, nz = q_cdf.shape
    counts = np.zeros((nx, nz), dtype=np.int64)
    n_keep = (n_sweeps - burn_in + thin - 1) // thin if n_sweeps > burn_in else 0
    xs = np.empty(n_keep, dtype=np.int64)
    zs = np.empty(n_keep, dtype=np.int64)
    x, z = int(x0), int(z0)
    kept = 0
    for t in range(n_sweeps):
        x = min(int(np.searchsorted(p_cdf[z], ux[t], side="right")), nx - 1)
        record = t >= burn_in and (t - burn_in) % thin == 0
        if record:
            counts[x, z] += 1
        z = min(int(np.searchsorted(q_cdf[x], uz[t], side="right")), nz - 1)
        if record:
            counts[x, z] += 1
            xs[kept] = x
            zs[kept] = z
            kept += 1
    return xs, zs, counts


@njit
def _tabular_chain_nb(p_cdf, q_cdf, x0, z0, ux, uz, burn_in, thin):
    n_sweeps = ux.shape[0]
    nx, nz = q_cdf.shape
    counts = np.zeros((nx, nz), dtype=np.int64)
    n_keep = (n_sweeps - burn_in + thin - 1) // thin if n_sweeps > burn_in else 0
    xs = np.empty(n_keep, dtype=np.int64)
    zs = np.empty(n_keep, dtype=np.int64)
    x = x0
    z = z0
    kept = 0
    for t in range(n_sweeps):
        j = 0
        while j < nx - 1 and p_cdf[z, j] <= ux[t]:
            j += 1
        x = j
        record = t >= burn_in and (t - burn_in) % thin == 0
        if record:
            counts[x, z] += 1
        j = 0
        while j < nz - 1 and q_cdf[x, j] <= uz[t]:
            j += 1
        z = j
        if record:
            counts[x, z] += 1
            xs[kept] = x
            zs[kept] = z
            kept += 1
    return xs, zs, counts


# --- clamped site-wise chain -------------------------------------------------
# Sites of x are independent Bernoulli given z: p_on[z, i] = p(x_i = 1 | z).
# Observed sites keep their values; hidden sites are resampled each sweep.
# q_cdf is indexed by the integer code of the full bit vector x
# (bit i of the code is site i).

def _clamped_chain_np(p_on, q_cdf, x_init, hidden, z0, ux, uz, burn_in):
    n_sweeps = ux.shape[0]
    nz, n_sites = p_on.shape
    x = x_init.copy()
    z = int(z0)
    site_counts = np.zeros(n_sites, dtype=np.float64)
    z_counts = np.zeros(nz, dtype=np.float64)
    weights = 1 << np.arange(n_sites)
    for t in range(n_sweeps):
        x[hidden] = (ux[t, hidden] < p_on[z, hidden]).astype(x.dtype)
        code = int((x * weights).sum())
        z = min(int(np.searchsorted(q_cdf[code], uz[t], side="right")), nz - 1)
        if t >= burn_in:
            site_counts += x
            z_counts[z] += 1.0
    return site_counts, z_counts


@njit
def _clamped_chain_nb(p_on, q_cdf, x_init, hidden, z0, ux, uz, burn_in):
    n_sweeps = ux.shape[0]
    nz, n_sites = p_on.shape
    x = x_init.copy()
    z = z0
    site_counts = np.zeros(n_sites, dtype=np.float64)
    z_counts = np.zeros(nz, dtype=np.float64)
    for t in range(n_sweeps):
        code = 0
        for i in range(n_sites):
            if hidden[i]:
                x[i] = 1 if ux[t, i] < p_on[z, i] else 0
            code += x[i] << i
        j = 0
        while j < nz - 1 and q_cdf[code, j] <= uz[t]:
            j += 1
        z = j
        if t >= burn_in:
            for i in range(n_sites):
                site_counts[i] += x[i]
            z_counts[z] += 1.0
    return site_counts, z_counts



# --- lifted-game gradient ascent ---------------------------------------------
# Rows of phi/psi are states of X x Z; lbp/lbq are log base measures (-inf
# allowed). Each player's step halves whenever its own move lowers its own
# utility. trace rows: (iteration, L_p, L_q, residual).

def _normalize_log_np(w):
    m = np.max(w)
    return w - (m + np.log(np.sum(np.exp(w - m))))


def _expect_log_np(weights, logp):
    mask = weights > 0
    return np.sum(weights[mask] * logp[mask])


def _game_ascent_np(phi, psi, lbp, lbq, u, v, su, sv, tol, max_iters, sequential, record_every):
    u = u.copy()
    v = v.copy()
    trace = np.zeros((max_iters // record_every + 1, 4))
    n_rec = 0
    lp = _normalize_log_np(lbp + phi @ u)
    lq = _normalize_log_np(lbq + psi @ v)
    res = np.inf
    it = 0
    while True:
        p = np.exp(lp)
        q = np.exp(lq)
        gu = q @ phi - p @ phi
        gv = p @ psi - q @ psi
        res = max(np.max(np.abs(gu)) if gu.size else 0.0, np.max(np.abs(gv)) if gv.size else 0.0)
        util_p = _expect_log_np(q, lp)
        util_q = _expect_log_np(p, lq)
        if it % record_every == 0:
            trace[n_rec] = (it, util_p, util_q, res)
            n_rec += 1
        if res < tol or it == max_iters:
            break
        while True:
            u_new = u + su * gu
            lp_new = _normalize_log_np(lbp + phi @ u_new)
            if _expect_log_np(q, lp_new) >= util_p - 1e-12 * (1.0 + abs(util_p)) or su < 1e-12:
                break
            su *= 0.5
        if sequential:
            p = np.exp(lp_new)
            gv = p @ psi - q @ psi
            util_q = _expect_log_np(p, lq)
        while True:
            v_new = v + sv * gv
            lq_new = _normalize_log_np(lbq + psi @ v_new)
            if _expect_log_np(p, lq_new) >= util_q - 1e-12 * (1.0 + abs(util_q)) or sv < 1e-12:
                break
            sv *= 0.5
        u, v, lp, lq = u_new, v_new, lp_new, lq_new
        it += 1
    return u, v, it, res, trace[:n_rec]


@njit
def _normalize_log_nb(w, out):
    m = -np.inf
    for i in range(w.shape[0]):
        if w[i] > m:
            m = w[i]
    s = 0.0
    for i in range(w.shape[0]):
        s += np.exp(w[i] - m)
    a = m + np.log(s)
    for i in range(w.shape[0]):
        out[i] = w[i] - a


@njit
def _expect_log_nb(weights, logp):
    s = 0.0
    for i in range(weights.shape[0]):
        if weights[i] > 0:
            s += weights[i] * logp[i]
    return s


@njit
def _affine_nb(base, a, x, out):
    n, d = a.shape
    for i in range(n):
        acc = base[i]
        for j in range(d):
            acc += a[i, j] * x[j]
        out[i] = acc


@njit
def _moment_diff_nb(w1, w2, a, out):
    n, d = a.shape
    for j in range(d):
        out[j] = 0.0
    for i in range(n):
        dw = w1[i] - w2[i]
        if dw != 0.0:
            for j in range(d):
                out[j] += dw * a[i, j]


@njit
def _game_ascent_nb(phi, psi, lbp, lbq, u, v, su, sv, tol, max_iters, sequential, record_every):
    n = phi.shape[0]
    u = u.copy()
    v = v.copy()
    u_new = np.empty_like(u)
    v_new = np.empty_like(v)
    gu = np.empty_like(u)
    gv = np.empty_like(v)
    tmp = np.empty(n)
    lp = np.empty(n)
    lq = np.empty(n)
    lp_new = np.empty(n)
    lq_new = np.empty(n)
    p = np.empty(n)
    q = np.empty(n)
    trace = np.zeros((max_iters // record_every + 1, 4))
    n_rec = 0
    _affine_nb(lbp, phi, u, tmp)
    _normalize_log_nb(tmp, lp)
    _affine_nb(lbq, psi, v, tmp)
    _normalize_log_nb(tmp, lq)
    res = np.inf
    it = 0
    while True:
        for i in range(n):
            p[i] = np.exp(lp[i])
            q[i] = np.exp(lq[i])
        _moment_diff_nb(q, p, phi, gu)
        _moment_diff_nb(p, q, psi, gv)
        res = 0.0
        for j in range(gu.shape[0]):
            res = max(res, abs(gu[j]))
        for j in range(gv.shape[0]):
            res = max(res, abs(gv[j]))
        util_p = _expect_log_nb(q, lp)
        util_q = _expect_log_nb(p, lq)
        if it % record_every == 0:
            trace[n_rec, 0] = it
            trace[n_rec, 1] = util_p
            trace[n_rec, 2] = util_q
            trace[n_rec, 3] = res
            n_rec += 1
        if res < tol or it == max_iters:
            break
        while True:
            for j in range(u.shape[0]):
                u_new[j] = u[j] + su * gu[j]
            _affine_nb(lbp, phi, u_new, tmp)
            _normalize_log_nb(tmp, lp_new)
            if _expect_log_nb(q, lp_new) >= util_p - 1e-12 * (1.0 + abs(util_p)) or su < 1e-12:
                break
            su *= 0.5
        if sequential:
            for i in range(n):
                p[i] = np.exp(lp_new[i])
            _moment_diff_nb(p, q, psi, gv)
            util_q = _expect_log_nb(p, lq)
        while True:
            for j in range(v.shape[0]):
                v_new[j] = v[j] + sv * gv[j]
            _affine_nb(lbq, psi, v_new, tmp)
            _normalize_log_nb(tmp, lq_new)
            if _expect_log_nb(p, lq_new) >= util_q - 1e-12 * (1.0 + abs(util_q)) or sv < 1e-12:
                break
            sv *= 0.5
        u[:] = u_new
        v[:] = v_new
        lp[:] = lp_new
        lq[:] = lq_new
        it += 1
    return u, v, it, res, trace[:n_rec]

if _jit.USE_JIT:
    draw_rows = _draw_rows_nb
    tabular_chain = _tabular_chain_nb
    clamped_chain = _clamped_chain_nb
    game_ascent = _game_ascent_nb
else:
    draw_rows = _draw_rows_np
    tabular_chain = _tabular_chain_np
    clamped_chain = _clamped_chain_np
    game_ascent = _game_ascent_np

IMPLEMENTATIONS = {
    "draw_rows": (_draw_rows_np, _draw_rows_nb),
    "tabular_chain": (_tabular_chain_np, _tabular_chain_nb),
    "clamped_chain": (_clamped_chain_np, _clamped_chain_nb),
    "game_ascent": (_game_ascent_np, _game_ascent_nb),
}


def cdf_rows(probs):
    """Row-wise CDF with the last column pinned to exactly 1."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    return np.ascontiguousarray(cdf)
