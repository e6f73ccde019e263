"""Compiled inner loops for soft trees stored in heap layout.

A tree is a set of parallel arrays indexed by heap position: node ``i`` has
children ``2i+1`` (left) and ``2i+2`` (right).  ``kind`` marks each slot as
empty, leaf or branch.  Every array here is indexed that way, and all
functions operate on plain numpy arrays so they can be called from numba and
from Python alike.
"""

import math

import numpy as np
from numba import njit

EMPTY = 0
LEAF = 1
BRANCH = 2

GROW = 0
PRUNE = 1
CHANGE = 2
SWAP = 3

LOG_2PI = math.log(2.0 * math.pi)
# floor used inside log(s_j) so an underflowed split probability stays finite
_S_FLOOR = 1e-300


@njit(cache=True)
def logistic(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def node_depth(i):
    d = 0
    i += 1
    while i > 1:
        i >>= 1
        d += 1
    return d


@njit(cache=True)
def n_nodes_for_depth(max_depth):
    return (1 << (max_depth + 1)) - 1


@njit(cache=True)
def leaf_indices(kind):
    count = 0
    for i in range(kind.size):
        if kind[i] == LEAF:
            count += 1
    out = np.empty(count, np.int64)
    q = 0
    for i in range(kind.size):
        if kind[i] == LEAF:
            out[q] = i
            q += 1
    return out


@njit(cache=True)
def active_indices(kind, top):
    count = 0
    for i in range(top):
        if kind[i] != EMPTY:
            count += 1
    out = np.empty(count, np.int64)
    q = 0
    for i in range(top):
        if kind[i] != EMPTY:
            out[q] = i
            q += 1
    return out


@njit(cache=True)
def leaf_matrix(X, kind, var, cut, tau, leaves):
    """Leaf-membership probabilities, shape (n, n_leaves), leaves in heap order."""
    n = X.shape[0]
    nl = leaves.size
    out = np.empty((n, nl))
    if nl == 1:
        out[:, 0] = 1.0
        return out
    top = leaves[nl - 1] + 1
    active = active_indices(kind, top)
    prob = np.empty(top)
    for i in range(n):
        prob[0] = 1.0
        q = 0
        for a in range(active.size):
            node = active[a]
            if kind[node] == BRANCH:
                p = prob[node]
                if p == 0.0:
                    prob[2 * node + 1] = 0.0
                    prob[2 * node + 2] = 0.0
                else:
                    g = logistic((X[i, var[node]] - cut[node]) / tau[node])
                    r = p * g
                    prob[2 * node + 2] = r
                    prob[2 * node + 1] = p - r
            else:
                out[i, q] = prob[node]
                q += 1
    return out


@njit(cache=True)
def in_subtree(node, root):
    while node > root:
        node = (node - 1) // 2
    return node == root


@njit(cache=True)
def candidate_leaf_matrix(X, phi, leaves, ck, cv, cc, tau, cleaves, root):
    """Leaf matrix of a candidate that differs from the current tree only below ``root``.

    Columns for leaves outside the subtree are copied from ``phi``; the mass
    reaching ``root`` is the sum of the current subtree's leaf columns and is
    pushed down through the candidate subtree.
    """
    if root == 0:
        return leaf_matrix(X, ck, cv, cc, tau, cleaves)
    n = X.shape[0]
    nl = cleaves.size
    out = np.empty((n, nl))
    cnt = 0
    for a in range(leaves.size):
        if in_subtree(leaves[a], root):
            cnt += 1
    sub_cols = np.empty(cnt, np.int64)
    cnt = 0
    for a in range(leaves.size):
        if in_subtree(leaves[a], root):
            sub_cols[cnt] = a
            cnt += 1
    src = np.empty(nl, np.int64)
    for c in range(nl):
        if in_subtree(cleaves[c], root):
            src[c] = -1
        else:
            src[c] = np.searchsorted(leaves, cleaves[c])
    top = cleaves[nl - 1] + 1
    cnt = 0
    for node in range(root, top):
        if ck[node] != EMPTY and in_subtree(node, root):
            cnt += 1
    sub = np.empty(cnt, np.int64)
    col = np.empty(cnt, np.int64)
    cnt = 0
    for node in range(root, top):
        if ck[node] != EMPTY and in_subtree(node, root):
            sub[cnt] = node
            col[cnt] = np.searchsorted(cleaves, node) if ck[node] == LEAF else -1
            cnt += 1
    prob = np.empty(top)
    for i in range(n):
        for c in range(nl):
            if src[c] >= 0:
                out[i, c] = phi[i, src[c]]
        pr = 0.0
        for a in range(sub_cols.size):
            pr += phi[i, sub_cols[a]]
        prob[root] = pr
        for a in range(sub.size):
            node = sub[a]
            if ck[node] == BRANCH:
                p = prob[node]
                if p == 0.0:
                    prob[2 * node + 1] = 0.0
                    prob[2 * node + 2] = 0.0
                else:
                    g = logistic((X[i, cv[node]] - cc[node]) / tau[node])
                    r = p * g
                    prob[2 * node + 2] = r
                    prob[2 * node + 1] = p - r
            else:
                out[i, col[a]] = prob[node]
    return out


@njit(cache=True)
def weighted_stats(phi, R, W):
    """Return (sum W phi phi^T, sum W R phi, sum W R^2, sum W)."""
    n, nl = phi.shape
    G = np.zeros((nl, nl))
    b = np.zeros(nl)
    wrr = 0.0
    sw = 0.0
    for i in range(n):
        w = W[i]
        wr = w * R[i]
        sw += w
        wrr += wr * R[i]
        for a in range(nl):
            pa = phi[i, a]
            if pa == 0.0:
                continue
            b[a] += wr * pa
            wpa = w * pa
            for c in range(a + 1):
                G[a, c] += wpa * phi[i, c]
    for a in range(nl):
        for c in range(a):
            G[c, a] = G[a, c]
    return G, b, wrr, sw


@njit(cache=True)
def cholesky_lower(A):
    """In-place lower Cholesky factor; returns False when A is not numerically SPD."""
    k = A.shape[0]
    for j in range(k):
        s = A[j, j]
        for c in range(j):
            s -= A[j, c] * A[j, c]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        A[j, j] = d
        for i in range(j + 1, k):
            t = A[i, j]
            for c in range(j):
                t -= A[i, c] * A[j, c]
            A[i, j] = t / d
    for j in range(k):
        for i in range(j):
            A[i, j] = 0.0
    return True


@njit(cache=True)
def forward_solve(Lm, b):
    k = b.size
    z = np.empty(k)
    for i in range(k):
        t = b[i]
        for c in range(i):
            t -= Lm[i, c] * z[c]
        z[i] = t / Lm[i, i]
    return z


@njit(cache=True)
def backward_solve_t(Lm, z):
    """Solve Lm^T x = z."""
    k = z.size
    x = np.empty(k)
    for i in range(k - 1, -1, -1):
        t = z[i]
        for c in range(i + 1, k):
            t -= Lm[c, i] * x[c]
        x[i] = t / Lm[i, i]
    return x


@njit(cache=True)
def posterior_factor(G, b, sigma2, prior_prec):
    """Cholesky factor of the leaf posterior precision and whitened mean.

    Returns (ok, Lm, z) where Lm Lm^T = prior_prec I + G / sigma2 and
    z = Lm^{-1} b / sigma2, so the posterior mean is Lm^{-T} z.
    """
    k = b.size
    A = G / sigma2
    for i in range(k):
        A[i, i] += prior_prec
    ok = cholesky_lower(A)
    if not ok:
        return False, A, np.zeros(k)
    z = forward_solve(A, b / sigma2)
    return True, A, z


@njit(cache=True)
def log_marginal(G, b, wrr, sw, sigma2, prior_prec):
    """Leaf-integrated weighted log-likelihood; NaN signals a non-SPD precision."""
    ok, Lm, z = posterior_factor(G, b, sigma2, prior_prec)
    if not ok:
        return np.nan
    k = b.size
    logdet = 0.0
    for i in range(k):
        logdet += math.log(Lm[i, i])
    return (
        -0.5 * sw * (LOG_2PI + math.log(sigma2))
        - 0.5 * wrr / sigma2
        + 0.5 * k * math.log(prior_prec)
        - logdet
        + 0.5 * np.dot(z, z)
    )


@njit(cache=True)
def draw_leaves(Lm, z, rng):
    k = z.size
    e = np.empty(k)
    for i in range(k):
        e[i] = z[i] + rng.standard_normal()
    return backward_solve_t(Lm, e)


@njit(cache=True)
def split_prob(depth, alpha, beta, max_depth):
    if depth >= max_depth:
        return 0.0
    return alpha / (1.0 + depth) ** beta


@njit(cache=True)
def draw_index(cum, u):
    k = 0
    last = cum.size - 1
    while k < last and u >= cum[k]:
        k += 1
    return k


@njit(cache=True)
def tree_counts(kind, top):
    """Return (n_leaves, n_branches, n_prunable) over slots [0, top)."""
    nl = 0
    nb = 0
    nog = 0
    for i in range(top):
        k = kind[i]
        if k == LEAF:
            nl += 1
        elif k == BRANCH:
            nb += 1
            if kind[2 * i + 1] == LEAF and kind[2 * i + 2] == LEAF:
                nog += 1
    return nl, nb, nog


@njit(cache=True)
def used_top(kind):
    for i in range(kind.size - 1, -1, -1):
        if kind[i] != EMPTY:
            return i + 1
    return 1


@njit(cache=True)
def nth_of_kind(kind, top, target, n, prunable):
    q = 0
    for i in range(top):
        if kind[i] != target:
            continue
        if prunable and not (kind[2 * i + 1] == LEAF and kind[2 * i + 2] == LEAF):
            continue
        if q == n:
            return i
        q += 1
    return -1


@njit(cache=True)
def propose(kind, var, cut, ck, cv, cc, s_cum, log_s, splittable, move_cum,
            alpha, beta, max_depth, rng):
    """Write a candidate tree into (ck, cv, cc).

    Returns (move, ok, log_q_ratio, log_prior_ratio, root).  ``ok`` is False
    for an impossible or degenerate proposal, which the caller treats as a
    rejection.  ``log_q_ratio`` is log q(T*, T) - log q(T, T*).  ``root`` is
    the top of the only subtree in which candidate and current tree differ.
    """
    ck[:] = kind
    cv[:] = var
    cc[:] = cut
    move = draw_index(move_cum, rng.random())
    top = used_top(kind)
    nl, nb, nog = tree_counts(kind, top)
    p_grow = move_cum[0]
    p_prune = move_cum[1] - move_cum[0]
    if move == GROW:
        leaf = nth_of_kind(kind, top, LEAF, rng.integers(0, nl), False)
        d = node_depth(leaf)
        v = draw_index(s_cum, rng.random())
        c = rng.random()
        if d >= max_depth or not splittable[v]:
            return move, False, 0.0, 0.0, 0
        ck[leaf] = BRANCH
        cv[leaf] = v
        cc[leaf] = c
        ck[2 * leaf + 1] = LEAF
        ck[2 * leaf + 2] = LEAF
        # prunable nodes after growing: the new branch, minus its parent if that was prunable
        nog_new = nog + 1
        if leaf > 0:
            par = (leaf - 1) // 2
            sib = 4 * par + 3 - leaf
            if kind[sib] == LEAF:
                nog_new -= 1
        pd = split_prob(d, alpha, beta, max_depth)
        pc = split_prob(d + 1, alpha, beta, max_depth)
        log_q = (math.log(p_prune) - math.log(nog_new)) - (
            math.log(p_grow) - math.log(nl) + log_s[v])
        log_prior = math.log(pd) + 2.0 * math.log1p(-pc) - math.log1p(-pd) + log_s[v]
        return move, True, log_q, log_prior, leaf
    if move == PRUNE:
        if nog == 0:
            return move, False, 0.0, 0.0, 0
        node = nth_of_kind(kind, top, BRANCH, rng.integers(0, nog), True)
        d = node_depth(node)
        v = var[node]
        ck[node] = LEAF
        cv[node] = 0
        cc[node] = 0.0
        ck[2 * node + 1] = EMPTY
        ck[2 * node + 2] = EMPTY
        cv[2 * node + 1] = 0
        cv[2 * node + 2] = 0
        pd = split_prob(d, alpha, beta, max_depth)
        pc = split_prob(d + 1, alpha, beta, max_depth)
        log_q = (math.log(p_grow) - math.log(nl - 1) + log_s[v]) - (
            math.log(p_prune) - math.log(nog))
        log_prior = math.log1p(-pd) - math.log(pd) - 2.0 * math.log1p(-pc) - log_s[v]
        return move, True, log_q, log_prior, node
    if move == CHANGE:
        if nb == 0:
            return move, False, 0.0, 0.0, 0
        node = nth_of_kind(kind, top, BRANCH, rng.integers(0, nb), False)
        v_old = var[node]
        v = draw_index(s_cum, rng.random())
        c = rng.random()
        if not splittable[v]:
            return move, False, 0.0, 0.0, 0
        cv[node] = v
        cc[node] = c
        return move, True, log_s[v_old] - log_s[v], log_s[v] - log_s[v_old], node
    # swap a uniformly chosen non-root branch with its parent
    if nb < 2:
        return move, False, 0.0, 0.0, 0
    r = rng.integers(0, nb - 1)
    child = -1
    q = 0
    for i in range(1, top):
        if kind[i] == BRANCH:
            if q == r:
                child = i
                break
            q += 1
    par = (child - 1) // 2
    cv[par] = var[child]
    cc[par] = cut[child]
    cv[child] = var[par]
    cc[child] = cut[par]
    return move, True, 0.0, 0.0, par


@njit(cache=True)
def tree_predict_into(phi, leaves, value, out):
    n, nl = phi.shape
    for i in range(n):
        acc = 0.0
        for a in range(nl):
            acc += phi[i, a] * value[leaves[a]]
        out[i] = acc


@njit(cache=True)
def dirichlet_draw(conc, rng):
    """Dirichlet draw via log-gamma variates; safe for tiny concentrations."""
    d = conc.size
    logg = np.empty(d)
    for j in range(d):
        a = conc[j]
        g = rng.standard_gamma(a + 1.0)
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        logg[j] = math.log(g) + math.log(u) / a
    mx = logg.max()
    out = np.empty(d)
    tot = 0.0
    for j in range(d):
        out[j] = math.exp(logg[j] - mx)
        tot += out[j]
    for j in range(d):
        out[j] /= tot
    return out


@njit(cache=True)
def sigma2_draw(wrr, sw, nu, lam, rng):
    shape = 0.5 * (nu + sw)
    scale = 0.5 * (nu * lam + wrr)
    return scale / rng.standard_gamma(shape)


@njit(cache=True)
def sweep(X, y, W, kind, var, cut, value, tau_nodes, tau, tree_fit, phis,
          sigma, s, splittable, move_cum, alpha, beta, max_depth, prior_prec,
          nu, lam, a_dir, tau0, tau_step, soft, update_s, rng, stats):
    """One Gibbs sweep, in place.  Returns the new sigma.

    Order: per tree (residual, structure MH, leaf draw); sigma; split
    probabilities; per-tree softness.  ``stats`` accumulates
    (proposed, accepted) per move type in rows 0..3 and softness in row 4.
    """
    n = X.shape[0]
    m = kind.shape[0]
    d = X.shape[1]
    fit = np.zeros(n)
    for j in range(m):
        for i in range(n):
            fit[i] += tree_fit[j, i]
    sigma2 = sigma * sigma
    s_cum = np.cumsum(s)
    log_s = np.empty(d)
    for v in range(d):
        log_s[v] = math.log(max(s[v], _S_FLOOR))
    nn = kind.shape[1]
    ck = np.empty(nn, kind.dtype)
    cv = np.empty(nn, var.dtype)
    cc = np.empty(nn)
    R = np.empty(n)
    newfit = np.empty(n)

    for j in range(m):
        for i in range(n):
            R[i] = y[i] - fit[i] + tree_fit[j, i]
        move, ok, log_q, log_prior, root = propose(
            kind[j], var[j], cut[j], ck, cv, cc, s_cum, log_s, splittable,
            move_cum, alpha, beta, max_depth, rng)
        leaves = leaf_indices(kind[j])
        phi = phis[j]
        G, b, wrr, sw = weighted_stats(phi, R, W)
        u = rng.random()
        if ok:
            stats[move, 0] += 1
            cleaves = leaf_indices(ck)
            cphi = candidate_leaf_matrix(X, phi, leaves, ck, cv, cc, tau_nodes[j],
                                         cleaves, root)
            cG, cb, _, _ = weighted_stats(cphi, R, W)
            ml_cur = log_marginal(G, b, wrr, sw, sigma2, prior_prec)
            ml_new = log_marginal(cG, cb, wrr, sw, sigma2, prior_prec)
            log_acc = log_q + log_prior + ml_new - ml_cur
            if ml_new == ml_new and math.log(u) < log_acc:
                stats[move, 1] += 1
                kind[j, :] = ck
                var[j, :] = cv
                cut[j, :] = cc
                leaves = cleaves
                phi = cphi
                G = cG
                b = cb
        okf, Lm, z = posterior_factor(G, b, sigma2, prior_prec)
        if not okf:
            raise FloatingPointError("leaf posterior precision is not positive definite")
        mu = draw_leaves(Lm, z, rng)
        phis[j] = phi
        for a in range(leaves.size):
            value[j, leaves[a]] = mu[a]
        tree_predict_into(phi, leaves, value[j], newfit)
        for i in range(n):
            fit[i] += newfit[i] - tree_fit[j, i]
            tree_fit[j, i] = newfit[i]

    wrr = 0.0
    sw = 0.0
    for i in range(n):
        r = y[i] - fit[i]
        wrr += W[i] * r * r
        sw += W[i]
    sigma2 = sigma2_draw(wrr, sw, nu, lam, rng)
    sigma = math.sqrt(sigma2)

    if update_s:
        conc = np.full(d, a_dir / d)
        for j in range(m):
            for i in range(nn):
                if kind[j, i] == BRANCH:
                    conc[var[j, i]] += 1.0
        s[:] = dirichlet_draw(conc, rng)

    if soft:
        tnew = np.empty(nn)
        for j in range(m):
            t_old = tau[j]
            t_new = t_old * math.exp(tau_step * rng.standard_normal())
            u = rng.random()
            stats[4, 0] += 1
            log_acc = -(t_new - t_old) / tau0 + math.log(t_new) - math.log(t_old)
            leaves = leaf_indices(kind[j])
            has_split = leaves.size > 1
            if has_split:
                tnew[:] = t_new
                phi = leaf_matrix(X, kind[j], var[j], cut[j], tnew, leaves)
                tree_predict_into(phi, leaves, value[j], newfit)
                ll = 0.0
                for i in range(n):
                    r = y[i] - fit[i] + tree_fit[j, i]
                    e1 = r - newfit[i]
                    e0 = r - tree_fit[j, i]
                    ll += W[i] * (e1 * e1 - e0 * e0)
                log_acc += -0.5 * ll / sigma2
            if math.log(u) < log_acc:
                stats[4, 1] += 1
                tau[j] = t_new
                tau_nodes[j, :] = t_new
                if has_split:
                    phis[j] = phi
                    for i in range(n):
                        fit[i] += newfit[i] - tree_fit[j, i]
                        tree_fit[j, i] = newfit[i]
    return sigma


@njit(cache=True)
def predict_compressed(X, offsets, node, kind, var, cut, value, tau, n_nodes, m):
    """Sum-of-trees output of every stored forest on X, shape (n_forests, n).

    Trees are stored consecutively, ``m`` per forest; ``offsets`` has one
    entry per tree plus one, nodes of a tree are listed in ascending heap
    order and ``tau`` holds one softness per tree.
    """
    n = X.shape[0]
    nt = offsets.size - 1
    out = np.zeros((nt // m, n))
    prob = np.empty(n_nodes)
    for t in range(nt):
        f = t // m
        k0 = offsets[t]
        k1 = offsets[t + 1]
        if k1 - k0 == 1:
            v = value[k0]
            for i in range(n):
                out[f, i] += v
            continue
        tt = tau[t]
        for i in range(n):
            prob[0] = 1.0
            acc = 0.0
            for q in range(k0, k1):
                nd = node[q]
                p = prob[nd]
                if kind[q] == BRANCH:
                    if p == 0.0:
                        prob[2 * nd + 1] = 0.0
                        prob[2 * nd + 2] = 0.0
                    else:
                        g = logistic((X[i, var[q]] - cut[q]) / tt)
                        r = p * g
                        prob[2 * nd + 2] = r
                        prob[2 * nd + 1] = p - r
                else:
                    acc += p * value[q]
            out[f, i] += acc
    return out
