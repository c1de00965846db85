"""Stochastic variational inference over node minibatches.

Each step: sample nodes per period, refresh the responsibilities of every
train dyad touching a sampled node against the frozen global counts, form an
inclusion-rescaled estimate of the full-sweep group counts, average it into
the global state with the Robbins-Monro weight rho_s = (tau + s)^(-p), run the
kappa sweep against the averaged counts, average the transition counts, and
move the hyperparameters toward the maximizer of the minibatch objective by
the same weight.

A dyad with at least one sampled endpoint enters the minibatch. Sampling n of
N nodes without replacement leaves a dyad out only when both endpoints are
unsampled, so every dyad shares one inclusion probability

    p_incl = 1 - (N - n)(N - n - 1) / (N (N - 1)),

the hypergeometric mass at zero sampled endpoints. The count estimate anchors
at the stored global counts and adds inclusion-weighted response changes:
exactly unbiased for the full-sweep refresh, preserves each node's slot
total, and reduces to the full refresh at n = N.

Held-out dyads are drawn before initialization and scored after every step by
their mean Bernoulli log-likelihood under posterior-mean memberships.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objective
from .model import GlobalStats, VariationalParams, interaction_norms
from .vem import (FittedModel, VemConfig, m_step, posterior_memberships,
                  refresh_kappa, refresh_phi_psi, transition_estimate,
                  _edge_ll_tables)

__all__ = ["SviConfig", "sample_minibatch", "inclusion_probability",
           "svi_step", "fit_svi", "draw_holdout"]


@dataclass(frozen=True)
class SviConfig:
    batch_nodes: int = 20
    tau: float = 1.0
    p_exp: float = 0.75
    holdout_frac: float = 0.01
    tol_holdout: float = 1e-3
    patience: int = 20
    max_steps: int = 500
    inner_mstep_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if not (0.5 < self.p_exp <= 1.0 or self.p_exp == 0.0):
            raise ValueError("p_exp must lie in (0.5, 1.0] "
                             "(0 is the constant-step testing escape)")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not 0.0 <= self.holdout_frac < 0.5:
            raise ValueError("holdout_frac must lie in [0, 0.5)")
        if self.batch_nodes < 1:
            raise ValueError("batch_nodes must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def rho(self, s):
        """Step weight at 1-based step s."""
        return float((self.tau + s) ** (-self.p_exp))


def inclusion_probability(n_nodes, batch_nodes):
    """Probability that a fixed dyad touches at least one sampled node."""
    n, b = n_nodes, min(batch_nodes, n_nodes)
    if n < 2:
        return 1.0
    return 1.0 - (n - b) * (n - b - 1) / (n * (n - 1))


def draw_holdout(net, frac, rng):
    """Per-period boolean masks marking held-out dyads (True = held out).

    The count is round(frac * total dyads), spread by a uniform draw over all
    dyad slots; drawn before any initialization so no estimate ever sees
    these outcomes.
    """
    masks = [np.zeros(net.n_dyads(t), dtype=bool) for t in range(net.n_periods)]
    n_hold = int(round(frac * net.total_dyads))
    if n_hold == 0:
        return masks
    offsets = np.cumsum([0] + [net.n_dyads(t) for t in range(net.n_periods)])
    flat = rng.choice(net.total_dyads, size=n_hold, replace=False)
    for slot in flat:
        t = int(np.searchsorted(offsets, slot, side="right") - 1)
        masks[t][slot - offsets[t]] = True
    return masks


def sample_minibatch(net, batch_nodes, rng):
    """Uniform node sample per period plus indices of the dyads they touch.

    Returns {"nodes": per-period local node index arrays, "dyads": per-period
    dyad index arrays}. A dyad belongs to the minibatch when its sender or
    receiver was sampled. Raises if no period contributes any dyad.
    """
    nodes, dyads = [], []
    total = 0
    for t in range(net.n_periods):
        n_t = net.n_present(t)
        if batch_nodes > n_t:
            raise ValueError(
                f"batch_nodes={batch_nodes} exceeds the {n_t} nodes present "
                f"in period {t}")
        chosen = np.sort(rng.choice(n_t, size=batch_nodes, replace=False))
        hit = np.zeros(n_t, dtype=bool)
        hit[chosen] = True
        idx = np.flatnonzero(hit[net.senders[t]] | hit[net.receivers[t]])
        nodes.append(chosen)
        dyads.append(idx)
        total += idx.size
    if total == 0:
        raise ValueError("minibatch subgraph is empty; no sampled node "
                         "touches any dyad")
    return {"nodes": nodes, "dyads": dyads}


def _estimated_counts(net, spec, c_store, vparams, phi_new, psi_new, batch,
                      p_incl):
    """Inclusion-rescaled estimate of the full-sweep expected counts.

    E_hat[C]_t = C_t + (1/p_incl) * sum over minibatch dyads of the change in
    their contributions. Negative cells (possible when 1/p_incl amplifies a
    drop) are floored at zero and the node row rescaled back to its slot
    total.
    """
    norms = interaction_norms(net, spec)
    out = []
    for t in range(net.n_periods):
        est = np.array(c_store[t], dtype=float)
        idx = batch["dyads"][t]
        if idx.size == net.n_dyads(t) and p_incl[t] >= 1.0:
            # Degenerate full-coverage step: tally the refreshed slots from
            # scratch. Mathematically the same as the incremental estimate,
            # but bit-identical to a batch E-sweep (no anchor rounding).
            out.append(objective.period_group_counts(
                net.senders[t][idx], net.receivers[t][idx],
                phi_new[t], psi_new[t], est.shape[0]))
            continue
        if idx.size:
            w = 1.0 / p_incl[t]
            dphi = (phi_new[t] - vparams.phi[t][idx]) * w
            dpsi = (psi_new[t] - vparams.psi[t][idx]) * w
            np.add.at(est, net.senders[t][idx], dphi)
            np.add.at(est, net.receivers[t][idx], dpsi)
            bad = np.flatnonzero((est < 0).any(axis=1))
            if bad.size:
                rows = np.clip(est[bad], 0.0, None)
                tot = rows.sum(axis=1)
                target = norms[t][bad]
                safe = tot > 0
                rows[safe] *= (target[safe] / tot[safe])[:, None]
                rows[~safe] = (target[~safe] / rows.shape[1])[:, None]
                est[bad] = rows
        out.append(est)
    return out


def svi_step(net, spec, hyper, vparams, c_store, u_store, step, config, rng,
             mstep_cfg):
    """One stochastic step; returns (hyper, vparams, c_store, u_store)."""
    rho = config.rho(step)
    batch = sample_minibatch(net, config.batch_nodes, rng)
    p_incl = [inclusion_probability(net.n_present(t), config.batch_nodes)
              for t in range(net.n_periods)]

    # local refresh of the sampled dyads against frozen global counts
    ll_tables = _edge_ll_tables(net, hyper)
    sub_phi, sub_psi = refresh_phi_psi(net, spec, hyper, vparams, c_store,
                                       ll_tables, dyad_idx=batch["dyads"])

    est = _estimated_counts(net, spec, c_store, vparams, sub_phi, sub_psi,
                            batch, p_incl)
    c_new = [(1.0 - rho) * c_store[t] + rho * est[t]
             for t in range(net.n_periods)]

    phi = [p.copy() for p in vparams.phi]
    psi = [p.copy() for p in vparams.psi]
    for t in range(net.n_periods):
        idx = batch["dyads"][t]
        if idx.size:
            phi[t][idx] = sub_phi[t]
            psi[t][idx] = sub_psi[t]

    kappa = refresh_kappa(net, spec, hyper, vparams.kappa, c_new, eu=u_store)
    u_new = ((1.0 - rho) * u_store
             + rho * objective.expected_trans_counts(kappa))

    scale = [net.n_dyads(t) / batch["dyads"][t].size
             if batch["dyads"][t].size else 1.0
             for t in range(net.n_periods)]
    new_vparams = VariationalParams(phi, psi, kappa)
    target, _ = m_step(net, spec, hyper, kappa, c_new, phi, psi, mstep_cfg,
                       dyad_idx=batch["dyads"], edge_scale=scale)
    x_old = objective.pack_hyper(hyper, spec)
    x_tgt = objective.pack_hyper(target, spec)
    # a full step lands on the target exactly; x_old + (x_tgt - x_old) does
    # not, by one rounding, and the drift compounds over iterations
    x_new = x_tgt.copy() if rho >= 1.0 else x_old + rho * (x_tgt - x_old)
    if not np.all(np.isfinite(x_new)):
        # halve the effective step and retry once before giving up
        x_new = x_old + 0.5 * rho * (x_tgt - x_old)
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError(
                f"non-finite hyperparameter update at step {step}")
    hyper_new = objective.unpack_hyper(x_new, spec, net.j_mon, net.j_dyad)
    return hyper_new, new_vparams, c_new, u_new


def _holdout_score(train_net, spec, hyper, kappa, ec, holdout):
    """Mean held-out log-likelihood under posterior-mean memberships."""
    from .model import edge_probs
    pi_hat = posterior_memberships(train_net, spec, hyper, kappa, ec)
    total, count = 0.0, 0
    for t, (send, recv, y, d) in enumerate(holdout):
        if not len(y):
            continue
        theta = edge_probs(hyper.b, hyper.gamma, d)
        p = np.einsum("dg,dgh,dh->d", pi_hat[t][send], theta,
                      pi_hat[t][recv])
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
        total += float((y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum())
        count += len(y)
    return total / count if count else np.nan


def fit_svi(net, spec, config=None, init=None, on_iteration=None):
    """Stochastic fit; mirrors fit_vem's interface and return type.

    The holdout is drawn first, the initializer only ever sees the training
    dyads, and every step scores the holdout (when present): stop once the
    score moves less than tol_holdout, once `patience` steps pass without a
    new best, or at max_steps.
    """
    config = config or SviConfig()
    if spec.directed != net.directed:
        raise ValueError("spec.directed disagrees with the network")
    rng = np.random.default_rng(config.seed)

    hold_masks = draw_holdout(net, config.holdout_frac, rng)
    holdout = [(net.senders[t][hold_masks[t]], net.receivers[t][hold_masks[t]],
                net.y[t][hold_masks[t]], net.d[t][hold_masks[t]])
               for t in range(net.n_periods)]
    train = (net.keep_dyads([~m for m in hold_masks])
             if any(m.any() for m in hold_masks) else net)

    if init is None:
        from .initialize import default_init
        vparams, hyper = default_init(train, spec, config.seed)
    else:
        vparams, hyper = init
        hyper.validate_for(spec)
    c_store = objective.expected_group_counts(train, vparams.phi, vparams.psi)
    u_store = objective.expected_trans_counts(vparams.kappa)
    mstep_cfg = VemConfig(inner_mstep_iters=config.inner_mstep_iters,
                          seed=config.seed)

    has_holdout = any(len(h[2]) for h in holdout)
    scores = []
    best, since_best = -np.inf, 0
    stop_reason = "max_steps"
    n_steps = 0
    for step in range(1, config.max_steps + 1):
        n_steps = step
        hyper, vparams, c_store, u_store = svi_step(
            train, spec, hyper, vparams, c_store, u_store, step, config, rng,
            mstep_cfg)
        if has_holdout:
            score = _holdout_score(train, spec, hyper, vparams.kappa,
                                   c_store, holdout)
            scores.append(score)
            if on_iteration is not None:
                on_iteration(step, score, np.nan)
            if score > best:
                best, since_best = score, 0
            else:
                since_best += 1
            if len(scores) > 1 and abs(scores[-1] - scores[-2]) < config.tol_holdout:
                stop_reason = "tolerance"
                break
            if since_best > config.patience:
                stop_reason = "patience"
                break
        elif on_iteration is not None:
            on_iteration(step, np.nan, np.nan)

    stats = GlobalStats(c_store, u_store, list(interaction_norms(train, spec)))
    lower = objective.elbo(train, spec, hyper, vparams, c_store)
    pi_hat = posterior_memberships(train, spec, hyper, vparams.kappa, c_store)
    return FittedModel(
        spec=spec, hyper=hyper, vparams=vparams, stats=stats,
        lower_bound=lower, pi_hat=pi_hat,
        trans_hat=transition_estimate(spec, u_store), n_iter=n_steps,
        converged=stop_reason in ("tolerance", "patience"),
        history={"holdout_ll": scores, "stop_reason": stop_reason,
                 "config": {"engine": "svi",
                            "batch_nodes": config.batch_nodes,
                            "tau": config.tau, "p_exp": config.p_exp,
                            "holdout_frac": config.holdout_frac,
                            "tol_holdout": config.tol_holdout,
                            "patience": config.patience,
                            "max_steps": config.max_steps,
                            "inner_mstep_iters": config.inner_mstep_iters,
                            "seed": config.seed}})
