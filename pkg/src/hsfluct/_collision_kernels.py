"""Compiled kernels for hard-sphere collision quadrature on velocity grids.

All operators share one discretization: collisions are enumerated over
unordered node pairs and a fixed antipodally-symmetric unit-sphere design,
with rate weight w_q ((v_i - v_j) . omega_q)_+ per node. Post-collision
velocities are deposited with per-axis quadratic three-point stencils, which
reproduce any per-axis quadratic exactly; pairings with 1, v_k and |v|^2 are
therefore conserved to roundoff. Nodes whose stencil leaves the grid are
dropped whole (gain and loss together), keeping conservation exact; the
dropped rate mass is returned as a diagnostic.
"""

import numpy as np

from ._jit import njit

__all__ = [
    "_cbil_kernel", "_assemble_lin", "_basis_pass", "_loss_rates",
    "_enumerate_noise", "_deposit_patterns", "_mean_rel_speed", "_gather_at",
]


@njit(cache=True)
def _stencil(p, vmin_node, inv_dx, m, d, ns, ws):
    for k in range(d):
        s = (p[k] - vmin_node) * inv_dx
        n = int(np.rint(s))
        if n < 1 or n > m - 2:
            return False
        xi = s - n
        ns[k] = n
        ws[k, 0] = 0.5 * xi * (xi - 1.0)
        ws[k, 1] = 1.0 - xi * xi
        ws[k, 2] = 0.5 * xi * (xi + 1.0)
    return True


@njit(cache=True)
def _strides_of(m, d):
    strides = np.empty(d, np.int64)
    strides[d - 1] = 1
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * m
    return strides


@njit(cache=True)
def _cbil_kernel(nodes, m, d, vmin_node, inv_dx, vol, omegas, omw,
                 fa, fb, act, inact, out):
    """Symmetric bilinear collision deposit; out accumulates the density of
    (1/2) * d/dt from pair interactions of fa and fb. Returns dropped rate."""
    n = nodes.shape[0]
    q_n = omegas.shape[0]
    n_off = 3 ** d
    strides = _strides_of(m, d)
    ns1 = np.empty(d, np.int64)
    ns2 = np.empty(d, np.int64)
    ws1 = np.empty((d, 3))
    ws2 = np.empty((d, 3))
    vp1 = np.empty(d)
    vp2 = np.empty(d)
    dropped = 0.0
    for ai in range(act.shape[0]):
        i = act[ai]
        for j in range(n):
            if j == i or (inact[j] and j < i):
                continue
            pf = 0.5 * (fa[i] * fb[j] + fb[i] * fa[j])
            if pf == 0.0:
                continue
            for q in range(q_n):
                lam = 0.0
                for k in range(d):
                    lam += (nodes[i, k] - nodes[j, k]) * omegas[q, k]
                if lam <= 0.0:
                    continue
                w = vol * omw[q] * lam * pf
                for k in range(d):
                    vp1[k] = nodes[i, k] - lam * omegas[q, k]
                    vp2[k] = nodes[j, k] + lam * omegas[q, k]
                if not _stencil(vp1, vmin_node, inv_dx, m, d, ns1, ws1) or \
                        not _stencil(vp2, vmin_node, inv_dx, m, d, ns2, ws2):
                    dropped += abs(w)
                    continue
                for code in range(n_off):
                    tmp = code
                    idx1 = 0
                    idx2 = 0
                    wt1 = 1.0
                    wt2 = 1.0
                    for k in range(d - 1, -1, -1):
                        off = tmp % 3
                        tmp //= 3
                        idx1 += (ns1[k] + off - 1) * strides[k]
                        idx2 += (ns2[k] + off - 1) * strides[k]
                        wt1 *= ws1[k, off]
                        wt2 *= ws2[k, off]
                    out[idx1] += w * wt1
                    out[idx2] += w * wt2
                out[i] -= w
                out[j] -= w
    return dropped


@njit(cache=True)
def _assemble_lin(nodes, m, d, vmin_node, inv_dx, vol, omegas, omw,
                  f, act, inact, lmat):
    """Dense matrix of the linearization h -> 2 * bilinear(f, h)."""
    n = nodes.shape[0]
    q_n = omegas.shape[0]
    n_off = 3 ** d
    strides = _strides_of(m, d)
    ns1 = np.empty(d, np.int64)
    ns2 = np.empty(d, np.int64)
    ws1 = np.empty((d, 3))
    ws2 = np.empty((d, 3))
    vp1 = np.empty(d)
    vp2 = np.empty(d)
    dropped = 0.0
    for ai in range(act.shape[0]):
        i = act[ai]
        for j in range(n):
            if j == i or (inact[j] and j < i):
                continue
            wi = 0.0
            wj = 0.0
            for q in range(q_n):
                lam = 0.0
                for k in range(d):
                    lam += (nodes[i, k] - nodes[j, k]) * omegas[q, k]
                if lam <= 0.0:
                    continue
                base = vol * omw[q] * lam
                wj = base * f[i]
                wi = base * f[j]
                if wi == 0.0 and wj == 0.0:
                    continue
                for k in range(d):
                    vp1[k] = nodes[i, k] - lam * omegas[q, k]
                    vp2[k] = nodes[j, k] + lam * omegas[q, k]
                if not _stencil(vp1, vmin_node, inv_dx, m, d, ns1, ws1) or \
                        not _stencil(vp2, vmin_node, inv_dx, m, d, ns2, ws2):
                    dropped += abs(wi) + abs(wj)
                    continue
                for code in range(n_off):
                    tmp = code
                    idx1 = 0
                    idx2 = 0
                    wt1 = 1.0
                    wt2 = 1.0
                    for k in range(d - 1, -1, -1):
                        off = tmp % 3
                        tmp //= 3
                        idx1 += (ns1[k] + off - 1) * strides[k]
                        idx2 += (ns2[k] + off - 1) * strides[k]
                        wt1 *= ws1[k, off]
                        wt2 *= ws2[k, off]
                    lmat[idx1, j] += wj * wt1
                    lmat[idx2, j] += wj * wt2
                    lmat[idx1, i] += wi * wt1
                    lmat[idx2, i] += wi * wt2
                lmat[i, j] -= wj
                lmat[j, j] -= wj
                lmat[i, i] -= wi
                lmat[j, i] -= wi
    return dropped


@njit(cache=True)
def _basis_pass(nodes, m, d, vmin_node, inv_dx, vol, omegas, omw,
                f, act, inact, phis, want_lstar, lstar, qmat):
    """One sweep producing the adjoint applied to each basis column
    (f-weighted, value form) and the noise covariance matrix
    q[a, b] = (1/2) iint f f B dphi_a dphi_b over the quadrature."""
    n = nodes.shape[0]
    q_n = omegas.shape[0]
    kk = phis.shape[1]
    n_off = 3 ** d
    strides = _strides_of(m, d)
    ns1 = np.empty(d, np.int64)
    ns2 = np.empty(d, np.int64)
    ws1 = np.empty((d, 3))
    ws2 = np.empty((d, 3))
    vp1 = np.empty(d)
    vp2 = np.empty(d)
    delt = np.empty(kk)
    dropped = 0.0
    for ai in range(act.shape[0]):
        i = act[ai]
        for j in range(n):
            if j == i or (inact[j] and j < i):
                continue
            fi = f[i]
            fj = f[j]
            if fi == 0.0 and fj == 0.0:
                continue
            for q in range(q_n):
                lam = 0.0
                for k in range(d):
                    lam += (nodes[i, k] - nodes[j, k]) * omegas[q, k]
                if lam <= 0.0:
                    continue
                base = vol * omw[q] * lam
                for k in range(d):
                    vp1[k] = nodes[i, k] - lam * omegas[q, k]
                    vp2[k] = nodes[j, k] + lam * omegas[q, k]
                if not _stencil(vp1, vmin_node, inv_dx, m, d, ns1, ws1) or \
                        not _stencil(vp2, vmin_node, inv_dx, m, d, ns2, ws2):
                    dropped += base * abs(fi * fj) * vol
                    continue
                for a in range(kk):
                    delt[a] = -phis[i, a] - phis[j, a]
                for code in range(n_off):
                    tmp = code
                    idx1 = 0
                    idx2 = 0
                    wt1 = 1.0
                    wt2 = 1.0
                    for k in range(d - 1, -1, -1):
                        off = tmp % 3
                        tmp //= 3
                        idx1 += (ns1[k] + off - 1) * strides[k]
                        idx2 += (ns2[k] + off - 1) * strides[k]
                        wt1 *= ws1[k, off]
                        wt2 *= ws2[k, off]
                    for a in range(kk):
                        delt[a] += wt1 * phis[idx1, a] + wt2 * phis[idx2, a]
                wq2 = base * vol * fi * fj
                for a in range(kk):
                    da = delt[a]
                    if want_lstar:
                        lstar[i, a] += base * fj * da
                        lstar[j, a] += base * fi * da
                    for b in range(a, kk):
                        qmat[a, b] += wq2 * da * delt[b]
    return dropped


@njit(cache=True)
def _loss_rates(nodes, vol, omegas, omw, f, act, out):
    """Collision frequency nu(v_i) = vol * sum_j f_j int ((v_i-v_j).omega)_+."""
    n = nodes.shape[0]
    d = nodes.shape[1]
    q_n = omegas.shape[0]
    for i in range(n):
        s = 0.0
        for aj in range(act.shape[0]):
            j = act[aj]
            if j == i:
                continue
            kern = 0.0
            for q in range(q_n):
                lam = 0.0
                for k in range(d):
                    lam += (nodes[i, k] - nodes[j, k]) * omegas[q, k]
                if lam > 0.0:
                    kern += omw[q] * lam
            s += f[j] * kern
        out[i] = vol * s
    return 0.0


@njit(cache=True)
def _enumerate_noise(nodes, m, d, vmin_node, inv_dx, vol, omegas, omw,
                     f, act, ii, jj, qq, ww, count_only):
    """List collision nodes (i < j, lambda > 0, stencils in range) with
    weight vol^2 w_q lambda f_i f_j. Two-pass: count, then fill."""
    q_n = omegas.shape[0]
    ns1 = np.empty(d, np.int64)
    ns2 = np.empty(d, np.int64)
    ws1 = np.empty((d, 3))
    ws2 = np.empty((d, 3))
    vp1 = np.empty(d)
    vp2 = np.empty(d)
    cnt = 0
    for ai in range(act.shape[0]):
        i = act[ai]
        for aj in range(ai + 1, act.shape[0]):
            j = act[aj]
            ff = f[i] * f[j]
            if ff <= 0.0:
                continue
            for q in range(q_n):
                lam = 0.0
                for k in range(d):
                    lam += (nodes[i, k] - nodes[j, k]) * omegas[q, k]
                if lam <= 0.0:
                    continue
                for k in range(d):
                    vp1[k] = nodes[i, k] - lam * omegas[q, k]
                    vp2[k] = nodes[j, k] + lam * omegas[q, k]
                if not _stencil(vp1, vmin_node, inv_dx, m, d, ns1, ws1) or \
                        not _stencil(vp2, vmin_node, inv_dx, m, d, ns2, ws2):
                    continue
                if not count_only:
                    ii[cnt] = i
                    jj[cnt] = j
                    qq[cnt] = q
                    ww[cnt] = vol * vol * omw[q] * lam * ff
                cnt += 1
    return cnt


@njit(cache=True)
def _deposit_patterns(nodes, m, d, vmin_node, inv_dx, vol, omegas,
                      ii, jj, qq, amps, out):
    """Add amp * (pattern / vol) for each listed collision node, where the
    pattern puts +1 at both post-collision points and -1 at both nodes."""
    n_off = 3 ** d
    strides = _strides_of(m, d)
    ns1 = np.empty(d, np.int64)
    ns2 = np.empty(d, np.int64)
    ws1 = np.empty((d, 3))
    ws2 = np.empty((d, 3))
    vp1 = np.empty(d)
    vp2 = np.empty(d)
    inv_vol = 1.0 / vol
    for r in range(ii.shape[0]):
        i = ii[r]
        j = jj[r]
        q = qq[r]
        amp = amps[r] * inv_vol
        if amp == 0.0:
            continue
        lam = 0.0
        for k in range(d):
            lam += (nodes[i, k] - nodes[j, k]) * omegas[q, k]
        for k in range(d):
            vp1[k] = nodes[i, k] - lam * omegas[q, k]
            vp2[k] = nodes[j, k] + lam * omegas[q, k]
        if not _stencil(vp1, vmin_node, inv_dx, m, d, ns1, ws1) or \
                not _stencil(vp2, vmin_node, inv_dx, m, d, ns2, ws2):
            continue
        for code in range(n_off):
            tmp = code
            idx1 = 0
            idx2 = 0
            wt1 = 1.0
            wt2 = 1.0
            for k in range(d - 1, -1, -1):
                off = tmp % 3
                tmp //= 3
                idx1 += (ns1[k] + off - 1) * strides[k]
                idx2 += (ns2[k] + off - 1) * strides[k]
                wt1 *= ws1[k, off]
                wt2 *= ws2[k, off]
            out[idx1] += amp * wt1
            out[idx2] += amp * wt2
        out[i] -= amp
        out[j] -= amp
    return 0.0


@njit(cache=True)
def _mean_rel_speed(nodes, vol, f, act):
    """iint f(v) f(w) |v - w| dv dw over the grid."""
    d = nodes.shape[1]
    s = 0.0
    for ai in range(act.shape[0]):
        i = act[ai]
        for aj in range(ai + 1, act.shape[0]):
            j = act[aj]
            d2 = 0.0
            for k in range(d):
                diff = nodes[i, k] - nodes[j, k]
                d2 += diff * diff
            s += f[i] * f[j] * np.sqrt(d2)
    return 2.0 * s * vol * vol


@njit(cache=True)
def _gather_at(m, d, vmin_node, inv_dx, values, pts, out, ok):
    """Quadratic interpolation of grid columns at arbitrary points."""
    kk = values.shape[1]
    strides = _strides_of(m, d)
    ns = np.empty(d, np.int64)
    ws = np.empty((d, 3))
    n_off = 3 ** d
    for r in range(pts.shape[0]):
        if not _stencil(pts[r], vmin_node, inv_dx, m, d, ns, ws):
            ok[r] = False
            for a in range(kk):
                out[r, a] = 0.0
            continue
        ok[r] = True
        for a in range(kk):
            out[r, a] = 0.0
        for code in range(n_off):
            tmp = code
            idx = 0
            wt = 1.0
            for k in range(d - 1, -1, -1):
                off = tmp % 3
                tmp //= 3
                idx += (ns[k] + off - 1) * strides[k]
                wt *= ws[k, off]
            for a in range(kk):
                out[r, a] += wt * values[idx, a]
    return 0.0
