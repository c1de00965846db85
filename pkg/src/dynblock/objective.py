"""Variational objective, analytic gradients, and free-parameter packing.

The evidence lower bound decomposes into four additive blocks:

    hmm         log-Gamma ratios of expected transition counts plus the
                uniform initial-state mass,
    membership  kappa-weighted Dirichlet-multinomial block per node-period,
                with E[log Gamma(a + C)] collapsed to log Gamma(a + E C)
                (zeroth-order Taylor substitution),
    edges       phi/psi-mixed Bernoulli log-likelihood over dyads,
    entropy     -E[log Q] of the factorized family.

Normal log-priors on the free hyperparameters are added when requested; the
penalized objective is what the M-step ascends. The edge block accepts an
optional per-period dyad subset and scale factor so the stochastic engine can
evaluate inclusion-rescaled minibatch objectives through the same code path.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, psi as digamma

from .model import Hyperparams, dirichlet_alphas, edge_probs, interaction_norms

__all__ = [
    "expected_group_counts", "expected_trans_counts", "elbo",
    "analytic_gradients", "pack_hyper", "unpack_hyper", "pack_grad",
    "hyper_objective",
]


def period_group_counts(senders, receivers, phi_t, psi_t, n_t):
    """(N_t, K) slot tally of one period; single accumulation order so every
    caller (batch sweep, full-coverage stochastic step) agrees bitwise."""
    k = phi_t.shape[1] if phi_t.ndim == 2 else psi_t.shape[1]
    ec = np.zeros((n_t, k))
    for g in range(k):
        ec[:, g] = (np.bincount(senders, weights=phi_t[:, g], minlength=n_t)
                    + np.bincount(receivers, weights=psi_t[:, g],
                                  minlength=n_t))
    return ec


def expected_group_counts(net, phi, psi):
    """E[C] under Q: per period, (N_t, K) sums of phi/psi over a node's slots."""
    return [period_group_counts(net.senders[t], net.receivers[t],
                                phi[t], psi[t], net.n_present(t))
            for t in range(net.n_periods)]


def expected_trans_counts(kappa):
    """E[U] under Q: sum over t of outer(kappa_t, kappa_{t+1})."""
    kappa = np.asarray(kappa)
    if kappa.shape[0] < 2:
        return np.zeros((kappa.shape[1], kappa.shape[1]))
    return kappa[:-1].T @ kappa[1:]


def _xlogx(a):
    out = np.zeros_like(a)
    mask = a > 0
    out[mask] = a[mask] * np.log(a[mask])
    return out


def _hmm_block(kappa, spec):
    m, eta = spec.n_states, spec.eta
    eu = expected_trans_counts(kappa)
    row = eu.sum(axis=1)
    val = -np.log(m)
    val += (gammaln(m * eta) - gammaln(m * eta + row)).sum()
    val += (gammaln(eta + eu) - gammaln(eta)).sum()
    return val


def membership_block_by_state(net, spec, hyper, ec):
    """Per period t and state m, the summed Dirichlet-multinomial term S[t, m].

    S[t, m] = sum_i [ lgamma(xi) - lgamma(xi + n_i)
                      + sum_k lgamma(alpha + E C) - lgamma(alpha) ].
    """
    norms = interaction_norms(net, spec)
    s = np.zeros((net.n_periods, spec.n_states))
    for t in range(net.n_periods):
        alpha = dirichlet_alphas(net.x[t], hyper.beta)   # (N, M, K)
        xi = alpha.sum(axis=2)
        term = gammaln(xi) - gammaln(xi + norms[t][:, None])
        term += (gammaln(alpha + ec[t][:, None, :]) - gammaln(alpha)).sum(axis=2)
        s[t] = term.sum(axis=0)
    return s


def _edge_block(net, hyper, phi, psi, dyad_idx=None, edge_scale=None):
    total = 0.0
    for t in range(net.n_periods):
        if not net.n_dyads(t):
            continue
        idx = None if dyad_idx is None else dyad_idx[t]
        scale = 1.0 if edge_scale is None else float(edge_scale[t])
        if idx is not None and len(idx) == 0:
            continue
        d_t = net.d[t] if idx is None else net.d[t][idx]
        y_t = net.y[t] if idx is None else net.y[t][idx]
        f_t = phi[t] if idx is None else phi[t][idx]
        p_t = psi[t] if idx is None else psi[t][idx]
        theta = edge_probs(hyper.b, hyper.gamma, d_t)
        ll = (y_t[:, None, None] * np.log(theta)
              + (1.0 - y_t)[:, None, None] * np.log1p(-theta))
        total += scale * np.einsum("dg,dh,dgh->", f_t, p_t, ll)
    return total


def _entropy(vparams):
    h = -_xlogx(vparams.kappa).sum()
    for t in range(len(vparams.phi)):
        if vparams.phi[t].size:
            h -= _xlogx(vparams.phi[t]).sum()
            h -= _xlogx(vparams.psi[t]).sum()
    return h


def _log_prior(hyper, spec):
    val = -0.5 * (((hyper.b - spec.mu_b) / spec.sd_b) ** 2).sum()
    if hyper.gamma.size:
        val += -0.5 * (((hyper.gamma - spec.mu_gamma) / spec.sd_gamma) ** 2).sum()
    if hyper.beta.shape[1] > 1:
        free = hyper.beta[:, 1:, :]
        val += -0.5 * (((free - spec.mu_beta) / spec.sd_beta) ** 2).sum()
    return val


def elbo(net, spec, hyper, vparams, ec=None, *, include_priors=True,
         dyad_idx=None, edge_scale=None):
    """Evidence lower bound E_Q[log collapsed joint] - E_Q[log Q].

    With `include_priors` the Normal log-priors on the free hyperparameters
    are added, giving the penalized objective the M-step ascends. `ec` may be
    passed to reuse known expected counts; otherwise they are tallied from
    `vparams`.
    """
    if ec is None:
        ec = expected_group_counts(net, vparams.phi, vparams.psi)
    val = _hmm_block(vparams.kappa, spec)
    s = membership_block_by_state(net, spec, hyper, ec)
    val += float((vparams.kappa * s).sum())
    val += _edge_block(net, hyper, vparams.phi, vparams.psi, dyad_idx, edge_scale)
    val += _entropy(vparams)
    if include_priors:
        val += _log_prior(hyper, spec)
    if not np.isfinite(val):
        raise FloatingPointError("non-finite evidence lower bound")
    return float(val)


# ---------------------------------------------------------------------------
# analytic gradients (penalized)
# ---------------------------------------------------------------------------

def analytic_gradients(net, spec, hyper, kappa, ec, phi, psi, *,
                       dyad_idx=None, edge_scale=None):
    """Gradients of the penalized objective in the full parameter shapes.

    Returns (grad_b, grad_gamma, grad_beta). The beta gradient's group-0
    slice is zero (reference group); undirected symmetrization happens in
    `pack_grad`, not here, so finite differences of the elbo in the packed
    space match `pack_grad` of these arrays directly.
    """
    k = spec.n_groups
    g_b = np.zeros((k, k))
    g_gamma = np.zeros(hyper.gamma.size)
    for t in range(net.n_periods):
        if not net.n_dyads(t):
            continue
        idx = None if dyad_idx is None else dyad_idx[t]
        scale = 1.0 if edge_scale is None else float(edge_scale[t])
        if idx is not None and len(idx) == 0:
            continue
        d_t = net.d[t] if idx is None else net.d[t][idx]
        y_t = net.y[t] if idx is None else net.y[t][idx]
        f_t = phi[t] if idx is None else phi[t][idx]
        p_t = psi[t] if idx is None else psi[t][idx]
        theta = edge_probs(hyper.b, hyper.gamma, d_t)
        resid = y_t[:, None, None] - theta
        g_b += scale * np.einsum("dg,dh,dgh->gh", f_t, p_t, resid)
        if g_gamma.size:
            per_dyad = np.einsum("dg,dh,dgh->d", f_t, p_t, resid)
            g_gamma += scale * (per_dyad @ d_t)

    g_beta = np.zeros_like(hyper.beta)
    norms = interaction_norms(net, spec)
    for t in range(net.n_periods):
        alpha = dirichlet_alphas(net.x[t], hyper.beta)   # (N, M, K)
        xi = alpha.sum(axis=2)
        dig = digamma(alpha + ec[t][:, None, :]) - digamma(alpha)
        dig += (digamma(xi) - digamma(xi + norms[t][:, None]))[:, :, None]
        # weight nodes by kappa_tm, contract covariates
        weighted = alpha * dig * kappa[t][None, :, None]
        g_beta += np.einsum("nmk,nj->mkj", weighted, net.x[t])
    g_beta[:, 0, :] = 0.0

    g_b -= (hyper.b - spec.mu_b) / spec.sd_b ** 2
    if g_gamma.size:
        g_gamma -= (hyper.gamma - spec.mu_gamma) / spec.sd_gamma ** 2
    if k > 1:
        g_beta[:, 1:, :] -= (hyper.beta[:, 1:, :] - spec.mu_beta) / spec.sd_beta ** 2
    return g_b, g_gamma, g_beta


# ---------------------------------------------------------------------------
# free-parameter packing
# ---------------------------------------------------------------------------

def _triu_indices(k):
    return np.triu_indices(k)


def pack_hyper(hyper, spec):
    """Flatten free parameters: b (upper triangle when undirected), gamma,
    beta slices for groups 1..K-1."""
    if spec.directed:
        b_part = hyper.b.ravel()
    else:
        iu = _triu_indices(spec.n_groups)
        b_part = hyper.b[iu]
    parts = [b_part, hyper.gamma]
    if spec.n_groups > 1:
        parts.append(hyper.beta[:, 1:, :].ravel())
    return np.concatenate(parts)


def unpack_hyper(vec, spec, j_mon, j_dyad):
    k, m = spec.n_groups, spec.n_states
    if spec.directed:
        nb = k * k
        b = vec[:nb].reshape(k, k)
    else:
        nb = k * (k + 1) // 2
        b = np.zeros((k, k))
        iu = _triu_indices(k)
        b[iu] = vec[:nb]
        b = b + np.triu(b, 1).T
    gamma = vec[nb:nb + j_dyad]
    beta = np.zeros((m, k, j_mon))
    if k > 1:
        beta[:, 1:, :] = vec[nb + j_dyad:].reshape(m, k - 1, j_mon)
    return Hyperparams(b, beta, gamma)


def pack_grad(g_b, g_gamma, g_beta, spec):
    """Project full-shape gradients onto the packed free-parameter space."""
    if spec.directed:
        b_part = g_b.ravel()
    else:
        # mirrored cells share one free parameter; diagonal cells appear once
        sym = g_b + g_b.T
        np.fill_diagonal(sym, np.diag(g_b))
        b_part = sym[_triu_indices(spec.n_groups)]
    parts = [b_part, g_gamma]
    if spec.n_groups > 1:
        parts.append(g_beta[:, 1:, :].ravel())
    return np.concatenate(parts)


def hyper_objective(net, spec, kappa, ec, phi, psi, *,
                    dyad_idx=None, edge_scale=None):
    """Closure (packed vector) -> (penalized objective, packed gradient).

    phi/psi enter only through per-dyad outer products, precomputed once; the
    returned callable is what the quasi-Newton M-step ascends. Non-finite
    evaluations (e.g. overflowing membership concentrations during a long
    line-search step) come back as -inf so the caller can backtrack.
    """
    j_mon, j_dyad = net.j_mon, net.j_dyad
    norms = interaction_norms(net, spec)
    pre = []
    for t in range(net.n_periods):
        idx = None if dyad_idx is None else dyad_idx[t]
        scale = 1.0 if edge_scale is None else float(edge_scale[t])
        if not net.n_dyads(t) or (idx is not None and len(idx) == 0):
            pre.append(None)
            continue
        d_t = net.d[t] if idx is None else net.d[t][idx]
        y_t = net.y[t] if idx is None else net.y[t][idx]
        f_t = phi[t] if idx is None else phi[t][idx]
        p_t = psi[t] if idx is None else psi[t][idx]
        w = np.einsum("dg,dh->dgh", f_t, p_t) * scale
        pre.append((d_t, y_t, w))

    def value_and_grad(vec):
        try:
            hyper = unpack_hyper(vec, spec, j_mon, j_dyad)
        except ValueError:
            return -np.inf, np.zeros_like(vec)
        val = _log_prior(hyper, spec)
        g_b = -(hyper.b - spec.mu_b) / spec.sd_b ** 2
        g_gamma = -(hyper.gamma - spec.mu_gamma) / spec.sd_gamma ** 2 \
            if j_dyad else np.zeros(0)
        g_beta = np.zeros_like(hyper.beta)
        if spec.n_groups > 1:
            g_beta[:, 1:, :] = -(hyper.beta[:, 1:, :] - spec.mu_beta) / spec.sd_beta ** 2

        for t in range(net.n_periods):
            try:
                alpha = dirichlet_alphas(net.x[t], hyper.beta)
            except ValueError:
                return -np.inf, np.zeros_like(vec)
            xi = alpha.sum(axis=2)
            term = gammaln(xi) - gammaln(xi + norms[t][:, None])
            term += (gammaln(alpha + ec[t][:, None, :]) - gammaln(alpha)).sum(axis=2)
            val += float(kappa[t] @ term.sum(axis=0))
            dig = digamma(alpha + ec[t][:, None, :]) - digamma(alpha)
            dig += (digamma(xi) - digamma(xi + norms[t][:, None]))[:, :, None]
            weighted = alpha * dig * kappa[t][None, :, None]
            g_beta += np.einsum("nmk,nj->mkj", weighted, net.x[t])

            if pre[t] is None:
                continue
            d_t, y_t, w = pre[t]
            theta = edge_probs(hyper.b, hyper.gamma, d_t)
            ll = (y_t[:, None, None] * np.log(theta)
                  + (1.0 - y_t)[:, None, None] * np.log1p(-theta))
            val += float((w * ll).sum())
            resid = y_t[:, None, None] - theta
            g_b += (w * resid).sum(axis=0)
            if j_dyad:
                g_gamma += (w * resid).sum(axis=(1, 2)) @ d_t

        g_beta[:, 0, :] = 0.0
        if not np.isfinite(val):
            return -np.inf, np.zeros_like(vec)
        return val, pack_grad(g_b, g_gamma, g_beta, spec)

    return value_and_grad
