"""Batch collapsed variational EM.

E-step: closed-form updates for the dyad-slot group responsibilities (phi,
psi) and the period-state responsibilities (kappa), all under zeroth-order
Taylor substitutions E[log(a + X)] ~= log(a + E X). The sweep is Jacobi-style
for phi/psi (every dyad updated against one frozen snapshot of expected
counts), followed by a count refresh, followed by a sequential kappa pass in
time order with expected transition counts maintained exactly.

M-step: limited-memory quasi-Newton ascent of the penalized objective over
the free hyperparameters (blockmodel, membership coefficients, edge
coefficients).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import psi as digamma, softmax

from . import objective
from .model import (GlobalStats, VariationalParams, dirichlet_alphas,
                    edge_probs, interaction_norms)
from .optimize import maximize

__all__ = [
    "VemConfig", "FittedModel", "refresh_phi_psi", "refresh_kappa", "e_step",
    "m_step", "fit_vem", "standard_errors", "posterior_memberships",
    "transition_estimate", "collapsed_gradients",
]

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class VemConfig:
    tol_hyper: float = 1e-4
    max_iter: int = 100
    inner_mstep_iters: int = 50
    seed: int = 0
    se_samples: int = 100

    def __post_init__(self):
        if not self.tol_hyper > 0:
            raise ValueError("tol_hyper must be positive")
        if self.max_iter < 1 or self.inner_mstep_iters < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class FittedModel:
    spec: object
    hyper: object
    vparams: VariationalParams
    stats: GlobalStats
    lower_bound: float
    pi_hat: list
    trans_hat: np.ndarray
    n_iter: int
    converged: bool
    history: dict = field(default_factory=dict)
    se: dict | None = None


def _edge_ll_tables(net, hyper):
    """Per period, (D, K, K) array of y*log(theta) + (1-y)*log(1-theta)."""
    tables = []
    for t in range(net.n_periods):
        if not net.n_dyads(t):
            tables.append(np.zeros((0, hyper.b.shape[0], hyper.b.shape[0])))
            continue
        theta = edge_probs(hyper.b, hyper.gamma, net.d[t])
        y = net.y[t][:, None, None]
        tables.append(y * np.log(theta) + (1.0 - y) * np.log1p(-theta))
    return tables


def refresh_phi_psi(net, spec, hyper, vparams, ec, ll_tables=None,
                    dyad_idx=None):
    """One Jacobi sweep over dyad slots; returns (phi, psi) lists.

    Expected counts with the slot's own contribution removed drive the
    membership part; the partner slot's current responsibilities drive the
    edge part. With `dyad_idx` (per-period index arrays) only those rows are
    refreshed and returned; each row's update never depends on other rows, so
    a subset sweep reproduces the matching rows of the full sweep exactly.
    """
    if ll_tables is None:
        ll_tables = _edge_ll_tables(net, hyper)
    phi_new, psi_new = [], []
    for t in range(net.n_periods):
        idx = slice(None) if dyad_idx is None else dyad_idx[t]
        n_rows = net.n_dyads(t) if dyad_idx is None else len(dyad_idx[t])
        if not n_rows:
            empty = np.zeros((0, spec.n_groups))
            phi_new.append(vparams.phi[t].copy() if dyad_idx is None
                           else empty)
            psi_new.append(vparams.psi[t].copy() if dyad_idx is None
                           else empty.copy())
            continue
        alpha = dirichlet_alphas(net.x[t], hyper.beta)       # (N, M, K)
        kap = vparams.kappa[t]
        ll = ll_tables[t][idx]
        send = net.senders[t][idx]
        recv = net.receivers[t][idx]
        phi_old = vparams.phi[t][idx]
        psi_old = vparams.psi[t][idx]

        ec_ex = np.clip(ec[t][send] - phi_old, 0.0, None)
        base = np.clip(alpha[send] + ec_ex[:, None, :], _LOG_FLOOR, None)
        logits = np.einsum("m,dmk->dk", kap, np.log(base))
        logits += np.einsum("dkh,dh->dk", ll, psi_old)
        phi_new.append(softmax(logits, axis=1))

        ec_ex = np.clip(ec[t][recv] - psi_old, 0.0, None)
        base = np.clip(alpha[recv] + ec_ex[:, None, :], _LOG_FLOOR, None)
        logits = np.einsum("m,dmk->dk", kap, np.log(base))
        logits += np.einsum("dgk,dg->dk", ll, phi_old)
        psi_new.append(softmax(logits, axis=1))
    return phi_new, psi_new


def _state_log_weights(t, n_periods, kappa, eu, eta, m_states):
    """Transition part of the kappa update's log weights at period t.

    Interior periods use the full expression (self-transition +1 correction,
    cross terms in both directions); the first period is the interior form
    with predecessor terms dropped; the final period uses the simplified
    closing form. Primed counts remove the focal period's own expected
    transitions before the Taylor substitution.
    """
    if n_periods == 1:
        return np.zeros(m_states)
    cur = kappa[t]
    prev = kappa[t - 1] if t > 0 else np.zeros(m_states)
    lw = np.zeros(m_states)
    if t == n_periods - 1:
        up = np.clip(eu.sum(axis=1) - cur + m_states * eta, _LOG_FLOOR, None)
        lw -= np.log(up)
        u_in = np.clip(eu - np.outer(prev, cur) + eta, _LOG_FLOOR, None)
        lw += prev @ np.log(u_in)
        return lw
    nxt = kappa[t + 1]
    up = np.clip(eu.sum(axis=1) - cur + m_states * eta, _LOG_FLOOR, None)
    lw -= np.log(up)
    diag = np.diag(eu) - prev * cur - cur * nxt
    diag = np.clip(diag + eta, _LOG_FLOOR, None)
    lw += (prev * nxt) * np.log(diag + 1.0)
    lw += (prev - prev * nxt + nxt) * np.log(diag)
    u_out = np.clip(eu - np.outer(cur, nxt) + eta, _LOG_FLOOR, None)
    u_in = np.clip(eu.T - np.outer(cur, prev) + eta, _LOG_FLOOR, None)
    off = ~np.eye(m_states, dtype=bool)
    lw += np.where(off, np.log(u_out), 0.0) @ nxt
    lw += np.where(off, np.log(u_in), 0.0) @ prev
    return lw


def refresh_kappa(net, spec, hyper, kappa, ec, eu=None):
    """Sequential kappa sweep in time order; returns the new (T, M) array.

    `eu` seeds the expected transition counts (defaults to the counts implied
    by `kappa`; the stochastic engine passes its averaged global state). The
    seed matrix is kept consistent while the sweep runs: each accepted update
    replaces the focal period's rank-one contributions.
    """
    n_periods, m_states = kappa.shape
    kappa = kappa.copy()
    memb = objective.membership_block_by_state(net, spec, hyper, ec)
    eu = (objective.expected_trans_counts(kappa) if eu is None
          else np.array(eu, dtype=float))
    for t in range(n_periods):
        lw = _state_log_weights(t, n_periods, kappa, eu, spec.eta, m_states)
        lw += memb[t]
        new = softmax(lw)
        old = kappa[t]
        if t > 0:
            eu += np.outer(kappa[t - 1], new - old)
        if t < n_periods - 1:
            eu += np.outer(new - old, kappa[t + 1])
        kappa[t] = new
    return kappa


def e_step(net, spec, hyper, vparams):
    """Full E-step; returns (vparams, expected counts) with fresh kappa."""
    ll_tables = _edge_ll_tables(net, hyper)
    ec_snapshot = objective.expected_group_counts(net, vparams.phi, vparams.psi)
    phi, psi = refresh_phi_psi(net, spec, hyper, vparams, ec_snapshot, ll_tables)
    ec = objective.expected_group_counts(net, phi, psi)
    kappa = refresh_kappa(net, spec, hyper, vparams.kappa, ec)
    return VariationalParams(phi, psi, kappa), ec


def m_step(net, spec, hyper0, kappa, ec, phi, psi, config, *,
           dyad_idx=None, edge_scale=None):
    """Quasi-Newton ascent of the penalized objective; never returns a point
    worse than `hyper0`. Returns (Hyperparams, AscentResult)."""
    fn = objective.hyper_objective(net, spec, kappa, ec, phi, psi,
                                   dyad_idx=dyad_idx, edge_scale=edge_scale)
    x0 = objective.pack_hyper(hyper0, spec)
    res = maximize(fn, x0, max_iter=config.inner_mstep_iters)
    hyper = objective.unpack_hyper(res.x, spec, net.j_mon, net.j_dyad)
    return hyper, res


def fit_vem(net, spec, config=None, init=None, on_iteration=None):
    """Alternate E and M steps until the hyperparameters stabilize.

    Parameters
    ----------
    init : (VariationalParams, Hyperparams), optional
        Warm start; defaults to the spectral initialization.
    on_iteration : callable, optional
        Called with (iteration, elbo, hyper_change) after each EM pass.
    """
    config = config or VemConfig()
    if spec.directed != net.directed:
        raise ValueError("spec.directed disagrees with the network")
    if init is None:
        from .initialize import default_init
        vparams, hyper = default_init(net, spec, config.seed)
    else:
        vparams, hyper = init
        hyper.validate_for(spec)

    elbo_trace, delta_trace = [], []
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        vparams, ec = e_step(net, spec, hyper, vparams)
        new_hyper, _ = m_step(net, spec, hyper, vparams.kappa, ec,
                              vparams.phi, vparams.psi, config)
        delta = float(np.max(np.abs(objective.pack_hyper(new_hyper, spec)
                                    - objective.pack_hyper(hyper, spec))))
        hyper = new_hyper
        value = objective.elbo(net, spec, hyper, vparams, ec)
        elbo_trace.append(value)
        delta_trace.append(delta)
        if on_iteration is not None:
            on_iteration(n_iter, value, delta)
        if delta < config.tol_hyper:
            converged = True
            break

    vparams, ec = e_step(net, spec, hyper, vparams)
    eu = objective.expected_trans_counts(vparams.kappa)
    stats = GlobalStats(ec, eu, list(interaction_norms(net, spec)))
    lower = objective.elbo(net, spec, hyper, vparams, ec)
    pi_hat = posterior_memberships(net, spec, hyper, vparams.kappa, ec)
    model = FittedModel(
        spec=spec, hyper=hyper, vparams=vparams, stats=stats,
        lower_bound=lower, pi_hat=pi_hat,
        trans_hat=transition_estimate(spec, eu), n_iter=n_iter,
        converged=converged,
        history={"elbo": elbo_trace, "hyper_change": delta_trace,
                 "config": {"engine": "vem", "tol_hyper": config.tol_hyper,
                            "max_iter": config.max_iter,
                            "inner_mstep_iters": config.inner_mstep_iters,
                            "seed": config.seed}})
    return model


# ---------------------------------------------------------------------------
# posterior summaries
# ---------------------------------------------------------------------------

def posterior_memberships(net, spec, hyper, kappa, ec):
    """Posterior-mean membership rows mixed over states:
    pi[i, k] = sum_m kappa_tm (alpha_imk + E C_ik) / (xi_im + n_inter_i)."""
    norms = interaction_norms(net, spec)
    out = []
    for t in range(net.n_periods):
        alpha = dirichlet_alphas(net.x[t], hyper.beta)
        xi = alpha.sum(axis=2)
        ratio = (alpha + ec[t][:, None, :]) / (xi + norms[t][:, None])[:, :, None]
        out.append(np.einsum("m,nmk->nk", kappa[t], ratio))
    return out


def transition_estimate(spec, eu):
    """Posterior-mean transition rows (eta + E U) / (M eta + E U row sum)."""
    m, eta = spec.n_states, spec.eta
    row = eu.sum(axis=1)
    return (eta + eu) / (m * eta + row)[:, None]


# ---------------------------------------------------------------------------
# sampled-Hessian standard errors
# ---------------------------------------------------------------------------

def collapsed_gradients(net, spec, hyper, latent, stats):
    """Gradients of log collapsed posterior + log prior at one exact latent
    configuration, in the full parameter shapes. Cheap path used by the
    standard-error sampler (hard counts rather than responsibilities)."""
    k = spec.n_groups
    g_b = np.zeros((k, k))
    g_gamma = np.zeros(net.j_dyad)
    for t in range(net.n_periods):
        if not net.n_dyads(t):
            continue
        theta = edge_probs(hyper.b, hyper.gamma, net.d[t])
        sel = theta[np.arange(theta.shape[0]), latent.z[t], latent.w[t]]
        resid = net.y[t] - sel
        pair = latent.z[t] * k + latent.w[t]
        g_b += np.bincount(pair, weights=resid, minlength=k * k).reshape(k, k)
        if g_gamma.size:
            g_gamma += resid @ net.d[t]

    g_beta = np.zeros_like(hyper.beta)
    norms = stats.n_inter
    for t in range(net.n_periods):
        m = int(latent.states[t])
        alpha = dirichlet_alphas(net.x[t], hyper.beta[m][None])[:, 0, :]
        xi = alpha.sum(axis=1)
        dig = digamma(alpha + stats.group_counts[t]) - digamma(alpha)
        dig += (digamma(xi) - digamma(xi + norms[t]))[:, None]
        g_beta[m] += np.einsum("nk,nj->kj", alpha * dig, net.x[t])
    g_beta[:, 0, :] = 0.0

    g_b -= (hyper.b - spec.mu_b) / spec.sd_b ** 2
    if g_gamma.size:
        g_gamma -= (hyper.gamma - spec.mu_gamma) / spec.sd_gamma ** 2
    if k > 1:
        g_beta[:, 1:, :] -= (hyper.beta[:, 1:, :] - spec.mu_beta) / spec.sd_beta ** 2
    return g_b, g_gamma, g_beta


def _draw_latent(net, vparams, rng):
    from .model import LatentState
    t_count = net.n_periods
    m = vparams.kappa.shape[1]
    states = np.array([rng.choice(m, p=vparams.kappa[t]) for t in range(t_count)])
    z, w = [], []
    for t in range(t_count):
        u = rng.random((net.n_dyads(t), 1))
        z.append((u > np.cumsum(vparams.phi[t], axis=1)).sum(axis=1))
        u = rng.random((net.n_dyads(t), 1))
        w.append((u > np.cumsum(vparams.psi[t], axis=1)).sum(axis=1))
    return LatentState(states, z, w)


def standard_errors(net, spec, fitted, n_samples=None, seed=0, fd_step=1e-5):
    """Sampled-Hessian standard errors at the fitted hyperparameters.

    Draws latent configurations from the variational posterior, computes the
    Hessian of log collapsed posterior + log prior at the fitted point for
    each draw by central finite differences of the analytic gradient, averages
    the Hessians, inverts the negated average, and reports square roots of
    the diagonal, unpacked into the parameter shapes (pinned reference-group
    cells get 0).
    """
    from .model import compute_stats
    if n_samples is None:
        n_samples = 100
    rng = np.random.default_rng(seed)
    x_hat = objective.pack_hyper(fitted.hyper, spec)
    p = x_hat.size
    h_sum = np.zeros((p, p))
    steps = fd_step * np.maximum(1.0, np.abs(x_hat))

    def packed_grad(vec, stats, latent):
        hyper = objective.unpack_hyper(vec, spec, net.j_mon, net.j_dyad)
        g_b, g_gamma, g_beta = collapsed_gradients(net, spec, hyper, latent, stats)
        return objective.pack_grad(g_b, g_gamma, g_beta, spec)

    for _ in range(n_samples):
        latent = _draw_latent(net, fitted.vparams, rng)
        stats = compute_stats(net, latent, spec)
        h = np.empty((p, p))
        for j in range(p):
            e = np.zeros(p)
            e[j] = steps[j]
            h[:, j] = (packed_grad(x_hat + e, stats, latent)
                       - packed_grad(x_hat - e, stats, latent)) / (2 * steps[j])
        h_sum += 0.5 * (h + h.T)

    h_bar = -h_sum / n_samples
    try:
        cov = np.linalg.inv(h_bar)
        diag = np.diag(cov)
        if np.any(diag <= 0):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        raise ValueError(
            "average sampled Hessian is not positive definite; increase "
            "se_samples or inspect for a flat/unidentified direction") from None
    se_vec = np.sqrt(diag)

    k, m = spec.n_groups, spec.n_states
    if spec.directed:
        nb = k * k
        se_b = se_vec[:nb].reshape(k, k)
    else:
        nb = k * (k + 1) // 2
        se_b = np.zeros((k, k))
        iu = np.triu_indices(k)
        se_b[iu] = se_vec[:nb]
        se_b = se_b + np.triu(se_b, 1).T
    se_gamma = se_vec[nb:nb + net.j_dyad]
    se_beta = np.zeros((m, k, net.j_mon))
    if k > 1:
        se_beta[:, 1:, :] = se_vec[nb + net.j_dyad:].reshape(m, k - 1, net.j_mon)
    return {"b": se_b, "gamma": se_gamma, "beta": se_beta}
