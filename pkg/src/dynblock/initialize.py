"""Starting values: spectral or degree-profile rows, picked by block contrast.

Two candidate starts are built. The spectral one clusters each period on its
own and permutation-aligns the per-period labels against a running reference,
so that "group 2" means the same thing in every period before the EM engine
ever sees the responsibilities. The degree-profile one ranks nodes by their
in/out interaction rates and maps the ranking onto soft membership rows; it
exists because networks whose groups differ mainly in activity level (rather
than in cut structure) give the spectral embedding nothing to work with,
while still leaving a strong footprint in the degrees. Whichever candidate
shows the larger per-period blockmodel contrast on the raw data wins; a
degree-profile winner is then polished by alternating least squares under a
bilinear edge model, optionally shrunk toward monadic-covariate predictions.
"""

from __future__ import annotations

import itertools
import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit, logit

from .model import Hyperparams, VariationalParams

__all__ = ["spectral_init", "degree_rows", "block_contrast", "refine_rows",
           "estimate_period_blockmodel", "align_labels", "default_init"]

_SOFT_HIT = 0.9


def _kmeans(points, k, rng, restarts=8, max_sweeps=100):
    """Plain Lloyd k-means with greedy distance-weighted seeding.

    Small and deterministic under the supplied generator; scikit-learn would
    be a heavy dependency for the one call site.
    """
    n = points.shape[0]
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = np.empty((k, points.shape[1]))
        centers[0] = points[rng.integers(n)]
        d2 = ((points - centers[0]) ** 2).sum(axis=1)
        for j in range(1, k):
            total = d2.sum()
            if total <= 0:
                centers[j] = points[rng.integers(n)]
            else:
                centers[j] = points[rng.choice(n, p=d2 / total)]
            d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(max_sweeps):
            dist = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
            new_labels = dist.argmin(axis=1)
            for j in range(k):
                mask = new_labels == j
                if mask.any():
                    centers[j] = points[mask].mean(axis=0)
                else:
                    centers[j] = points[dist.min(axis=1).argmax()]
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        inertia = ((points - centers[labels]) ** 2).sum()
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels
    return best_labels


def _soft_rows(labels, k):
    rows = np.full((labels.size, k), (1.0 - _SOFT_HIT) / max(k - 1, 1))
    rows[np.arange(labels.size), labels] = _SOFT_HIT if k > 1 else 1.0
    return rows


def spectral_init(net, k, seed=0, restarts=8):
    """Per-period soft group assignments from a regularized spectral step.

    Returns a list of (N_t, k) membership rows. Periods whose symmetrized
    adjacency has fewer than k informative eigenvalues fall back to random
    simplex rows with a warning.
    """
    rng = np.random.default_rng(seed)
    memberships = []
    for t in range(net.n_periods):
        n_t = net.n_present(t)
        if k == 1:
            memberships.append(np.ones((n_t, 1)))
            continue
        adj = np.zeros((n_t, n_t))
        if net.n_dyads(t):
            adj[net.senders[t], net.receivers[t]] = net.y[t]
        sym = 0.5 * (adj + adj.T)
        sym += sym.sum() / max(n_t, 1) / max(n_t, 1)  # mean degree over n
        vals, vecs = np.linalg.eigh(sym)
        order = np.argsort(np.abs(vals))[::-1]
        informative = int((np.abs(vals) > 1e-10).sum())
        if n_t < k or informative < k:
            warnings.warn(
                f"period {t}: embedding rank {informative} < {k} groups; "
                "falling back to random simplex initialization")
            memberships.append(rng.dirichlet(np.ones(k), size=n_t))
            continue
        emb = vecs[:, order[:k]]
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        emb = emb / np.maximum(norms, 1e-12)
        labels = _kmeans(emb, k, rng, restarts=restarts)
        memberships.append(_soft_rows(labels, k))
    return memberships


def estimate_period_blockmodel(memb_rows, senders, receivers, y, k,
                               prior_mean=0.5):
    """Soft empirical edge-rate matrix for one period.

    rate[g, h] = sum_d y_d * m[s_d, g] * m[r_d, h] / sum_d m[s_d, g] * m[r_d, h],
    with zero-weight cells set to `prior_mean`.
    """
    weight = np.einsum("dg,dh->gh", memb_rows[senders], memb_rows[receivers])
    hits = np.einsum("d,dg,dh->gh", y, memb_rows[senders], memb_rows[receivers])
    out = np.full((k, k), prior_mean)
    nz = weight > 0
    out[nz] = hits[nz] / weight[nz]
    return out


def _apply_perm(b, perm):
    return b[np.ix_(perm, perm)]


def align_labels(blockmodels, method="auto"):
    """Permutations aligning per-period blockmodels to a running mean.

    Period 0 keeps its labels. For each later period, picks the relabeling
    minimizing the Frobenius distance to the mean of the already-aligned
    blockmodels: exhaustively for k <= 8 (error above 12), or by a row/column
    assignment relaxation when `method="relaxation"` (the default above 8).
    Returns a list of index arrays p with aligned[g, h] = raw[p[g], p[h]].
    """
    k = blockmodels[0].shape[0]
    if method == "auto":
        method = "exhaustive" if k <= 8 else "relaxation"
    if method == "exhaustive" and k > 12:
        raise ValueError(
            f"exhaustive label alignment is infeasible for k={k}; "
            "use method='relaxation'")

    perms = [np.arange(k)]
    aligned = [blockmodels[0]]
    for b in blockmodels[1:]:
        ref = np.mean(aligned, axis=0)
        if method == "exhaustive":
            best, best_cost = None, np.inf
            for cand in itertools.permutations(range(k)):
                cand = np.asarray(cand)
                cost = float(((_apply_perm(b, cand) - ref) ** 2).sum())
                if cost < best_cost:
                    best, best_cost = cand, cost
        else:
            cost = ((b[None, :, :] - ref[:, None, :]) ** 2).sum(axis=2)
            cost += ((b.T[None, :, :] - ref.T[:, None, :]) ** 2).sum(axis=2)
            _, best = linear_sum_assignment(cost)
            best = np.asarray(best)
        perms.append(best)
        aligned.append(_apply_perm(b, best))
    return perms


def _clip_rows(rows):
    r = np.clip(rows, 0.02, 0.98)
    return r / r.sum(axis=1, keepdims=True)


def _tangent_basis(k):
    """Orthonormal basis of the sum-zero subspace of R^k, shape (k, k-1)."""
    centering = np.eye(k) - np.full((k, k), 1.0 / k)
    q, _ = np.linalg.qr(centering)
    return q[:, :k - 1]


def _degree_features(net):
    """Per-node in/out interaction rates: pooled means and per-period values.

    Node-periods never observed fall back to the pooled value, and nodes
    never observed at all to the column mean, so downstream consumers see
    finite numbers everywhere.
    """
    t_count, n = net.n_periods, net.n_nodes
    hits_out = np.zeros((t_count, n))
    hits_in = np.zeros((t_count, n))
    openings = np.zeros((t_count, n))
    for t in range(t_count):
        pres = net.present[t]
        np.add.at(hits_out[t], pres[net.senders[t]], net.y[t])
        np.add.at(hits_in[t], pres[net.receivers[t]], net.y[t])
        openings[t][pres] = max(pres.size - 1, 1)
    seen = openings > 0
    rate_out = np.where(seen, hits_out / np.maximum(openings, 1), np.nan)
    rate_in = np.where(seen, hits_in / np.maximum(openings, 1), np.nan)
    with np.errstate(invalid="ignore"):
        pooled = np.column_stack([np.nanmean(rate_out, axis=0),
                                  np.nanmean(rate_in, axis=0)])
    pooled = np.where(np.isfinite(pooled), pooled,
                      np.nanmean(pooled, axis=0, keepdims=True))
    per_t = []
    for t in range(t_count):
        ft = np.column_stack([rate_out[t], rate_in[t]])
        per_t.append(np.where(np.isfinite(ft), ft, pooled))
    return pooled, per_t


def degree_rows(net, k, seed=0):
    """Per-period soft membership rows from interaction-rate profiles.

    With two groups the pooled-and-current rate profiles are projected onto
    their leading principal axis and the projection is mapped linearly onto
    [0.02, 0.98], anchored at its 5th and 95th percentiles; that keeps the
    shape of the activity distribution instead of forcing hard labels. For
    more groups the profiles are clustered once on the pooled rates and each
    node-period gets kernel responsibilities to the cluster centers.
    """
    pooled, per_t = _degree_features(net)
    mu = pooled.mean(axis=0)
    sd = np.maximum(pooled.std(axis=0), 1e-12)
    fz = (pooled - mu) / sd
    rows_t = []
    if k == 1:
        return [np.ones((net.n_present(t), 1)) for t in range(net.n_periods)]
    if k == 2:
        _, _, vt = np.linalg.svd(fz - fz.mean(axis=0), full_matrices=False)
        axis = vt[0]
        for t in range(net.n_periods):
            ftz = (per_t[t] - mu) / sd
            proj = (0.5 * (ftz @ axis) + 0.5 * (fz @ axis))[net.present[t]]
            lo, hi = np.quantile(proj, 0.05), np.quantile(proj, 0.95)
            lead = 0.02 + 0.96 * np.clip((proj - lo) / max(hi - lo, 1e-12),
                                         0.0, 1.0)
            rows_t.append(np.column_stack([lead, 1.0 - lead]))
        return rows_t
    rng = np.random.default_rng(seed)
    labels = _kmeans(fz, k, rng, restarts=8)
    centers = np.stack([fz[labels == g].mean(axis=0) if np.any(labels == g)
                        else fz.mean(axis=0) for g in range(k)])
    for t in range(net.n_periods):
        ftz = (per_t[t] - mu) / sd
        feat = (0.5 * ftz + 0.5 * fz)[net.present[t]]
        d2 = ((feat[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        width = max(float(np.mean(np.min(d2, axis=1))), 1e-9)
        logits = -d2 / (2.0 * width)
        logits -= logits.max(axis=1, keepdims=True)
        resp = np.exp(logits)
        rows_t.append(_clip_rows(resp / resp.sum(axis=1, keepdims=True)))
    return rows_t


def block_contrast(net, rows_t):
    """Mean RMS deviation of per-period blockmodel cells from the edge rate.

    Soft rows that capture real group structure concentrate edges in some
    cells and starve others; rows unrelated to the data leave every cell near
    the overall rate. Used to decide between candidate starting rows.
    """
    vals = []
    for t in range(net.n_periods):
        if not net.n_dyads(t):
            continue
        bm = estimate_period_blockmodel(
            rows_t[t], net.senders[t], net.receivers[t], net.y[t],
            rows_t[t].shape[1], prior_mean=float(net.y[t].mean()))
        vals.append(float(np.sqrt(np.mean((bm - net.y[t].mean()) ** 2))))
    return float(np.mean(vals)) if vals else 0.0


def _mean_blockmodel(net, rows_t, k):
    bms = [estimate_period_blockmodel(rows_t[t], net.senders[t],
                                      net.receivers[t], net.y[t], k)
           for t in range(net.n_periods) if net.n_dyads(t)]
    return np.mean(bms, axis=0) if bms else np.full((k, k), 0.5)


def _dyad_slope(net, rows_t, bm):
    """Pooled linear-probability coefficients of the dyadic covariates."""
    if net.j_dyad == 0:
        return np.zeros(0)
    num = np.zeros(net.j_dyad)
    den = np.zeros((net.j_dyad, net.j_dyad))
    for t in range(net.n_periods):
        if not net.n_dyads(t):
            continue
        rloc = rows_t[t]
        base = np.einsum("dg,gh,dh->d", rloc[net.senders[t]], bm,
                         rloc[net.receivers[t]])
        num += net.d[t].T @ (net.y[t] - base)
        den += net.d[t].T @ net.d[t]
    try:
        return np.linalg.solve(den + 1e-9 * np.eye(net.j_dyad), num)
    except np.linalg.LinAlgError:
        return np.zeros(net.j_dyad)


def refine_rows(net, rows_t, n_sweeps=3, prior_rows=None, prior_weight=0.0):
    """Alternating least squares on membership rows under a bilinear model.

    Each sweep refits the pooled blockmodel and dyadic-covariate slopes from
    the current rows, then resolves every node's row by least squares against
    its incident edges. The per-node solve runs in the sum-zero tangent
    coordinates of the simplex, which keeps the system well conditioned (the
    all-ones direction carries no signal, only the overall edge rate). An
    optional ridge pulls rows toward externally predicted ones.

    Returns (rows, pooled blockmodel, dyadic slopes on the probability
    scale).
    """
    t_count, k = net.n_periods, rows_t[0].shape[1]
    if k == 1:
        bm = _mean_blockmodel(net, rows_t, k)
        return rows_t, bm, _dyad_slope(net, rows_t, bm)
    basis = _tangent_basis(k)
    center = np.full(k, 1.0 / k)
    bm = _mean_blockmodel(net, rows_t, k)
    slopes = np.zeros(net.j_dyad)
    for _ in range(n_sweeps):
        slopes = _dyad_slope(net, rows_t, bm)
        new_rows = []
        for t in range(t_count):
            if not net.n_dyads(t):
                new_rows.append(rows_t[t])
                continue
            rloc = rows_t[t]
            s_, q, y = net.senders[t], net.receivers[t], net.y[t]
            offset = net.d[t] @ slopes if net.j_dyad else 0.0
            a_out = rloc[q] @ bm.T
            a_in = rloc[s_] @ bm
            g_out = a_out @ basis
            g_in = a_in @ basis
            r_out = y - offset - a_out @ center
            r_in = y - offset - a_in @ center
            km = k - 1
            n_t = net.n_present(t)
            gram = np.zeros((n_t, km, km))
            rhs = np.zeros((n_t, km))
            np.add.at(gram, s_, g_out[:, :, None] * g_out[:, None, :])
            np.add.at(rhs, s_, g_out * r_out[:, None])
            np.add.at(gram, q, g_in[:, :, None] * g_in[:, None, :])
            np.add.at(rhs, q, g_in * r_in[:, None])
            if prior_rows is not None and prior_weight > 0.0:
                scale = prior_weight * np.trace(gram.mean(axis=0)) / km
                gram += scale * np.eye(km)[None, :, :]
                rhs += scale * ((prior_rows[t] - center) @ basis)
            sol = np.linalg.solve(gram + 1e-9 * np.eye(km)[None],
                                  rhs[:, :, None])[:, :, 0]
            new_rows.append(_clip_rows(center + sol @ basis.T))
        rows_t = new_rows
        bm = _mean_blockmodel(net, rows_t, k)
    return rows_t, bm, slopes


def _covariate_prediction(net, rows_t, blocks):
    """Blockwise regression of log membership shares on monadic covariates.

    Returns per-period predicted rows and the mean fraction of log-share
    variance the covariates explain (zero when they explain nothing, so the
    caller can skip the shrinkage entirely).
    """
    t_count = net.n_periods
    preds = [None] * t_count
    explained = []
    for b in sorted(set(blocks.tolist())):
        ts = [t for t in range(t_count) if blocks[t] == b]
        design = np.concatenate([net.x[t] for t in ts])
        shares = np.concatenate(
            [np.log(rows_t[t][:, :-1] / rows_t[t][:, -1:]) for t in ts])
        coef, *_ = np.linalg.lstsq(design, shares, rcond=None)
        resid = shares - design @ coef
        total = max(float(shares.var()), 1e-12)
        explained.append(max(1.0 - float(resid.var()) / total, 0.0))
        for t in ts:
            raw = net.x[t] @ coef
            full = np.column_stack([raw, np.zeros(raw.shape[0])])
            full -= full.max(axis=1, keepdims=True)
            e = np.exp(full)
            preds[t] = e / e.sum(axis=1, keepdims=True)
    return preds, float(np.mean(explained))


def default_init(net, spec, seed=0):
    """Compose the full warm start: candidate membership rows chosen by
    block contrast, uniform state responsibilities, and blockmodel-matched
    hyperparameters.

    Returns (VariationalParams, Hyperparams).
    """
    k, m = spec.n_groups, spec.n_states
    memberships = spectral_init(net, k, seed=seed)
    prior_mean = float(expit(spec.mu_b))

    btildes = []
    for t in range(net.n_periods):
        if net.n_dyads(t):
            btildes.append(estimate_period_blockmodel(
                memberships[t], net.senders[t], net.receivers[t], net.y[t],
                k, prior_mean))
        else:
            btildes.append(np.full((k, k), prior_mean))

    if net.n_periods > 1 and k > 1:
        perms = align_labels(btildes)
        memberships = [memb[:, p] for memb, p in zip(memberships, perms)]
        btildes = [_apply_perm(b, p) for b, p in zip(btildes, perms)]

    t_count = net.n_periods
    blocks = np.minimum((np.arange(t_count) * m) // t_count, m - 1)
    gamma0 = np.zeros(net.j_dyad)
    rate = np.clip(np.mean(btildes, axis=0), 1e-3, 1.0 - 1e-3)

    if k > 1:
        profile = degree_rows(net, k, seed=seed)
        if block_contrast(net, profile) > block_contrast(net, memberships):
            rows, bm, slopes = refine_rows(net, profile, n_sweeps=3)
            preds, explained = _covariate_prediction(net, rows, blocks)
            weight = min(1.0, 2.0 * explained)
            if weight > 0.01:
                rows, bm, slopes = refine_rows(net, rows, n_sweeps=3,
                                               prior_rows=preds,
                                               prior_weight=weight)
            memberships = rows
            rate = np.clip(bm, 1e-3, 1.0 - 1e-3)
            if net.j_dyad:
                pbar = np.mean([net.y[t].mean() for t in range(t_count)
                                if net.n_dyads(t)])
                gamma0 = slopes / max(pbar * (1.0 - pbar), 1e-6)

    phi = [memberships[t][net.senders[t]].copy() for t in range(net.n_periods)]
    psi = [memberships[t][net.receivers[t]].copy() for t in range(net.n_periods)]
    # Contiguous period blocks break the state symmetry: a uniform kappa with
    # identical per-state coefficients is a fixed point of the updates, so the
    # states would never differentiate.
    kappa = _soft_rows(blocks, m)

    b0 = np.asarray(logit(rate))
    if not spec.directed:
        b0 = 0.5 * (b0 + b0.T)
    hyper = Hyperparams(
        b=b0,
        beta=np.zeros((m, k, net.j_mon)),
        gamma=gamma0,
    )
    return VariationalParams(phi, psi, kappa), hyper
