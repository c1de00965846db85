"""Post-fit analysis: edge probabilities, counterfactuals, forecasts, AUROC,
and expanding-window refits.

Counterfactual membership rows substitute the shifted covariates into the
posterior-mean formula (prior weights plus the node's fitted expected counts)
rather than re-running inference. This is an approximation: it answers "what
if this node's covariates had been x' while everything else about the fit
stayed put", in the generative spirit of a covariate intervention, and it is
exact for hypothetical nodes that contribute no counts.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .model import dirichlet_alphas, edge_probs

__all__ = ["dyad_prob", "covariate_effect", "forecast", "auroc",
           "online_refit"]


def _local(net, t, node):
    """Global node index or id string -> local index at period t."""
    if isinstance(node, str):
        try:
            node = net.node_ids.index(node)
        except ValueError:
            raise ValueError(f"unknown node id {node!r}") from None
    loc = net.local_index(t)[node]
    if loc < 0:
        raise ValueError(f"node {net.node_ids[node]} absent in period {t}")
    return int(loc)


def _membership_row(fitted, net, t, local, x_row):
    """Posterior-mean membership for one node at period t, with covariates
    x_row; uses the node's fitted counts when local is given, otherwise the
    pure prior mean (hypothetical node)."""
    alpha = dirichlet_alphas(np.asarray(x_row, dtype=float)[None, :],
                             fitted.hyper.beta)[0]          # (M, K)
    if local is None:
        counts, n_slots = 0.0, 0.0
    else:
        counts = fitted.stats.group_counts[t][local]
        n_slots = fitted.stats.n_inter[t][local]
    num = alpha + counts
    den = alpha.sum(axis=1) + n_slots
    return fitted.vparams.kappa[t] @ (num / den[:, None])


def dyad_prob(fitted, net, p, q, t, *, x_p=None, x_q=None, d=None):
    """Expected edge probability for the ordered dyad (p, q) at period t:
    sum_{g,h} pi_p[g] pi_q[h] theta[g, h].

    `p`/`q` may be global indices, node-id strings, or None for a
    hypothetical node, in which case the matching covariate row is required.
    Supplying `x_p`/`x_q` for an observed node recomputes its membership row
    under those covariates (counterfactual); supplying the observed values
    reproduces the fitted row exactly. `d` overrides the dyadic covariates
    and is required when the dyad is unobserved and the model has any.
    """
    rows = []
    for node, x_row in ((p, x_p), (q, x_q)):
        if node is None:
            if x_row is None:
                raise ValueError(
                    "hypothetical node needs a covariate row with columns "
                    f"{net.x_names}")
            rows.append(_membership_row(fitted, net, t, None, x_row))
        else:
            local = _local(net, t, node)
            if x_row is None:
                rows.append(fitted.pi_hat[t][local])
            else:
                if len(np.atleast_1d(x_row)) != net.j_mon:
                    raise ValueError(
                        f"covariate override must supply columns {net.x_names}")
                rows.append(_membership_row(fitted, net, t, local, x_row))
    pi_p, pi_q = rows

    if d is None:
        if net.j_dyad == 0:
            d = np.zeros(0)
        else:
            if p is None or q is None:
                raise ValueError(
                    f"dyadic covariates {net.d_names} required for a "
                    "hypothetical dyad")
            lp = _local(net, t, p)
            lq = _local(net, t, q)
            if not net.directed and lp > lq:
                lp, lq = lq, lp
            hit = np.flatnonzero((net.senders[t] == lp)
                                 & (net.receivers[t] == lq))
            if hit.size == 0:
                raise ValueError(
                    f"dyad ({p}, {q}) not observed at period {t}; supply "
                    f"d= with columns {net.d_names}")
            d = net.d[t][hit[0]]
    theta = edge_probs(fitted.hyper.b, fitted.hyper.gamma,
                       np.atleast_1d(np.asarray(d, dtype=float))[None, :])[0]
    return float(pi_p @ theta @ pi_q)


def _period_probs(fitted, net, t, pi_rows):
    """(D_t,) expected edge probabilities with membership rows pi_rows."""
    theta = edge_probs(fitted.hyper.b, fitted.hyper.gamma, net.d[t])
    ps = pi_rows[net.senders[t]]
    qs = pi_rows[net.receivers[t]]
    return np.einsum("dg,dgh,dh->d", ps, theta, qs)


def _shifted_memberships(fitted, net, t, col, delta, cap, node_mask=None):
    """Membership rows after adding delta to covariate column `col`,
    optionally capped, for the masked nodes (all when mask is None)."""
    x = np.array(net.x[t], dtype=float)
    target = x[:, col] + delta
    if cap is not None:
        # cap bounds the shift, never reverses it: nodes already past the
        # cap keep their observed value
        if delta >= 0:
            target = np.maximum(np.minimum(target, cap), x[:, col])
        else:
            target = np.minimum(np.maximum(target, cap), x[:, col])
    if node_mask is None:
        x[:, col] = target
    else:
        x[node_mask, col] = target[node_mask]
    alpha = dirichlet_alphas(x, fitted.hyper.beta)
    num = alpha + fitted.stats.group_counts[t][:, None, :]
    den = alpha.sum(axis=2) + fitted.stats.n_inter[t][:, None]
    return np.einsum("m,nmk->nk", fitted.vparams.kappa[t], num / den[:, :, None])


def covariate_effect(fitted, net, covariate, delta, *, cap=None,
                     aggregation="overall"):
    """Average counterfactual change in edge probability from shifting one
    monadic covariate by `delta` (optionally capped at `cap`).

    aggregation:
      * "overall": every node shifted at once; returns the mean change over
        all dyad-periods.
      * "by-node": one node shifted at a time; returns an (n_nodes,) array of
        mean changes over that node's dyads (NaN when it has none).
      * "by-node-year": same but resolved per period; list of (N_t,) arrays.
    """
    if isinstance(covariate, str):
        if covariate in net.d_names:
            raise ValueError(
                f"{covariate!r} is dyadic; shift it through dyad_prob's "
                "d= override instead")
        if covariate not in net.x_names:
            raise ValueError(f"unknown covariate {covariate!r}; monadic "
                             f"columns are {net.x_names}")
        col = net.x_names.index(covariate)
    else:
        col = int(covariate)
        if not 0 <= col < net.j_mon:
            raise ValueError(f"covariate column {col} out of range")
    if aggregation not in ("overall", "by-node", "by-node-year"):
        raise ValueError("aggregation must be overall, by-node, or "
                         "by-node-year")

    base = [_period_probs(fitted, net, t, fitted.pi_hat[t])
            for t in range(net.n_periods)]

    if aggregation == "overall":
        num, den = 0.0, 0
        for t in range(net.n_periods):
            if not net.n_dyads(t):
                continue
            pi_s = _shifted_memberships(fitted, net, t, col, delta, cap)
            num += float((_period_probs(fitted, net, t, pi_s)
                          - base[t]).sum())
            den += net.n_dyads(t)
        return num / den if den else 0.0

    per_ty = []
    for t in range(net.n_periods):
        n_t = net.n_present(t)
        sums = np.zeros(n_t)
        cnts = np.zeros(n_t)
        if net.n_dyads(t):
            pi_all = _shifted_memberships(fitted, net, t, col, delta, cap)
            theta = edge_probs(fitted.hyper.b, fitted.hyper.gamma, net.d[t])
            pi0 = fitted.pi_hat[t]
            s, r = net.senders[t], net.receivers[t]
            base_d = base[t]
            # shift the sender only, then the receiver only
            send_shift = np.einsum("dg,dgh,dh->d", pi_all[s], theta, pi0[r])
            recv_shift = np.einsum("dg,dgh,dh->d", pi0[s], theta, pi_all[r])
            np.add.at(sums, s, send_shift - base_d)
            np.add.at(cnts, s, 1.0)
            np.add.at(sums, r, recv_shift - base_d)
            np.add.at(cnts, r, 1.0)
        with np.errstate(invalid="ignore"):
            per_ty.append(np.where(cnts > 0, sums / np.maximum(cnts, 1),
                                   np.nan))
    if aggregation == "by-node-year":
        return per_ty

    sums = np.zeros(net.n_nodes)
    cnts = np.zeros(net.n_nodes)
    for t in range(net.n_periods):
        ok = ~np.isnan(per_ty[t])
        globs = net.present[t][ok]
        np.add.at(sums, globs, per_ty[t][ok])
        np.add.at(cnts, globs, 1.0)
    with np.errstate(invalid="ignore"):
        return np.where(cnts > 0, sums / np.maximum(cnts, 1), np.nan)


def forecast(fitted, net, horizon, *, future_x=None, future_d=None,
             carry_forward=False, covariate_hook=None, seed=None):
    """Edge probabilities for the next `horizon` periods.

    The state distribution starts at the final-period responsibilities and
    evolves by the posterior-mean transition matrix; memberships are prior
    means under that distribution (no counts exist for the future); dyads are
    every ordered pair (unordered for undirected networks) among the nodes
    present in the final observed period.

    future_x / future_d: per-step lists of covariate matrices ((N, J_x) and
    (D, J_d)). With `carry_forward=True` missing entries reuse the final
    observed period's values (dyads unobserved then get zero covariates).
    `covariate_hook(step, x, d, y_draw, rng) -> (x_next, d_next)` optionally
    rolls auto-regressive covariates forward from a sampled realization of
    each step; `seed` is required with a hook.

    Returns a dict with keys state_dist (horizon, M), pi (list of (N, K)),
    probs (list of (D,)), senders, receivers, and sampled_y when sampling.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    t_last = net.n_periods - 1
    n_last = net.n_present(t_last)
    if covariate_hook is not None and seed is None:
        raise ValueError("covariate_hook requires a seed")
    rng = np.random.default_rng(seed) if covariate_hook is not None else None

    send, recv = np.where(~np.eye(n_last, dtype=bool))
    if not net.directed:
        keep = send < recv
        send, recv = send[keep], recv[keep]

    def observed_d():
        out = np.zeros((send.size, net.j_dyad))
        if net.j_dyad:
            lut = {(int(s), int(r)): i for i, (s, r) in enumerate(
                zip(net.senders[t_last], net.receivers[t_last]))}
            for i, (s, r) in enumerate(zip(send, recv)):
                row = lut.get((int(s), int(r)))
                if row is not None:
                    out[i] = net.d[t_last][row]
        return out

    def step_cov(supplied, fallback, step, what):
        if supplied is not None and step < len(supplied) \
                and supplied[step] is not None:
            return np.asarray(supplied[step], dtype=float)
        if carry_forward or covariate_hook is not None:
            return fallback
        raise ValueError(
            f"{what} for forecast step {step + 1} not supplied; pass "
            f"future values or set carry_forward=True")

    a_mat = fitted.trans_hat
    state = fitted.vparams.kappa[t_last]
    x_cur = np.asarray(net.x[t_last], dtype=float)
    d_cur = observed_d()

    state_rows, pi_list, prob_list, y_list = [], [], [], []
    for h in range(horizon):
        state = state @ a_mat
        state_rows.append(state.copy())
        x_h = step_cov(future_x, x_cur, h, "monadic covariates")
        d_h = step_cov(future_d, d_cur, h, "dyadic covariates")
        alpha = dirichlet_alphas(x_h, fitted.hyper.beta)
        prior = alpha / alpha.sum(axis=2, keepdims=True)
        pi = np.einsum("m,nmk->nk", state, prior)
        theta = edge_probs(fitted.hyper.b, fitted.hyper.gamma, d_h)
        probs = np.einsum("dg,dgh,dh->d", pi[send], theta, pi[recv])
        pi_list.append(pi)
        prob_list.append(probs)
        if covariate_hook is not None:
            y_draw = (rng.random(probs.size) < probs).astype(np.int64)
            y_list.append(y_draw)
            x_cur, d_cur = covariate_hook(h, x_h, d_h, y_draw, rng)
        else:
            x_cur, d_cur = x_h, d_h

    out = {"state_dist": np.array(state_rows), "pi": pi_list,
           "probs": prob_list, "senders": send, "receivers": recv}
    if y_list:
        out["sampled_y"] = y_list
    return out


def auroc(scores, labels):
    """Rank-based AUROC with tied scores averaged, plus its standard error.

    The point estimate is the Mann-Whitney statistic: with average ranks R_i
    of the positive scores among all scores, AUC = (sum R_i - n1(n1+1)/2) /
    (n1 n0). The standard error follows Hanley & McNeil (1982):
    var = [A(1-A) + (n1-1)(Q1 - A^2) + (n0-1)(Q2 - A^2)] / (n1 n0) with
    Q1 = A/(2-A), Q2 = 2A^2/(1+A). Returns (auc, sd).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUROC needs at least one positive and one "
                         "negative label")
    ranks = rankdata(scores)
    auc = (ranks[labels == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)
    q1 = auc / (2 - auc)
    q2 = 2 * auc ** 2 / (1 + auc)
    var = (auc * (1 - auc) + (n1 - 1) * (q1 - auc ** 2)
           + (n0 - 1) * (q2 - auc ** 2)) / (n1 * n0)
    return float(auc), float(np.sqrt(max(var, 0.0)))


def online_refit(net, spec, boundaries, config=None, on_iteration=None):
    """Expanding-window fits, each warm-started from the last.

    `boundaries` are window end periods (1-based lengths): nondecreasing and
    ending at net.n_periods. The first window fits from the standard
    initialization; later windows reuse the previous fit's responsibilities
    and hyperparameters, with newly arrived periods initialized spectrally
    and label-aligned to the fitted blockmodel. Returns the list of
    FittedModels in window order.
    """
    from .initialize import (align_labels, estimate_period_blockmodel,
                             spectral_init)
    from .vem import fit_vem

    bounds = [int(b) for b in boundaries]
    if not bounds:
        raise ValueError("need at least one window boundary")
    if any(b2 < b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError("window boundaries must be nondecreasing")
    if not all(1 <= b <= net.n_periods for b in bounds):
        raise ValueError("window boundary out of range")
    if bounds[-1] != net.n_periods:
        raise ValueError("final window must cover every period")

    fits = []
    prev = None
    for b in bounds:
        sub = net.window(b)
        if prev is None:
            fits.append(fit_vem(sub, spec, config, on_iteration=on_iteration))
        else:
            t_prev = len(prev.vparams.phi)
            phi = [p.copy() for p in prev.vparams.phi]
            psi = [p.copy() for p in prev.vparams.psi]
            kappa_rows = [prev.vparams.kappa[t] for t in range(t_prev)]
            if b > t_prev:
                memb_new = spectral_init(sub, spec.n_groups,
                                         seed=(config.seed if config else 0))
                ref = expit(prev.hyper.b)
                models = [ref]
                for t in range(t_prev, b):
                    if sub.n_dyads(t) and spec.n_groups > 1:
                        models.append(estimate_period_blockmodel(
                            memb_new[t], sub.senders[t], sub.receivers[t],
                            sub.y[t], spec.n_groups,
                            float(expit(spec.mu_b))))
                    else:
                        models.append(ref)
                perms = align_labels(models)[1:]
                for t, perm in zip(range(t_prev, b), perms):
                    rows = memb_new[t][:, perm]
                    phi.append(rows[sub.senders[t]].copy())
                    psi.append(rows[sub.receivers[t]].copy())
                    kappa_rows.append(prev.vparams.kappa[-1])
            from .model import VariationalParams
            vparams = VariationalParams(phi, psi, np.array(kappa_rows))
            fits.append(fit_vem(sub, spec, config,
                                init=(vparams, prev.hyper.copy()),
                                on_iteration=on_iteration))
        prev = fits[-1]
    return fits
