"""Model types and probability kernels.

Implements the collapsed form of a dynamic mixed-membership blockmodel in
which per-node membership vectors and the hidden-state transition matrix have
been integrated out. What remains is a function of discrete latent variables
only: per-dyad group indicators (z for the sender slot, w for the receiver
slot), a per-period hidden state s, and their sufficient statistics

    C[t][i, k]  count of times node i instantiates group k at period t,
    U[m, n]     count of hidden-state transitions m -> n.

``log_collapsed_posterior`` evaluates the exact log of the unnormalized
collapsed joint at one latent configuration and is the correctness oracle for
every approximate routine in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "ModelSpec", "Hyperparams", "LatentState", "GlobalStats",
    "VariationalParams", "dirichlet_alphas", "edge_logits", "edge_probs",
    "edge_prob", "interaction_norms", "compute_stats",
    "log_collapsed_posterior", "THETA_EPS",
]

# Probability clamp protecting log(theta) / log(1 - theta).
THETA_EPS = 1e-12

# Count normalization modes: exact per-node slot counts, or the constant
# 2 * N_t the derivation in the source formulation uses.
COUNT_MODES = ("interactions", "two-n")


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions, priors, and structural switches of one model family."""

    n_groups: int
    n_states: int
    directed: bool = True
    eta: float = 1.0
    mu_b: float = 0.0
    sd_b: float = 1.0
    mu_gamma: float = 0.0
    sd_gamma: float = 1.0
    mu_beta: float = 0.0
    sd_beta: float = 1.0
    count_mode: str = "interactions"

    def __post_init__(self):
        if self.n_groups < 1 or self.n_states < 1:
            raise ValueError("n_groups and n_states must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        for name in ("sd_b", "sd_gamma", "sd_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.count_mode not in COUNT_MODES:
            raise ValueError(f"count_mode must be one of {COUNT_MODES}")


class Hyperparams:
    """Blockmodel b (K x K), membership coefficients beta (M x K x J_x) with
    the group-0 slice pinned at zero, and edge coefficients gamma (J_d,)."""

    __slots__ = ("b", "beta", "gamma")

    def __init__(self, b, beta, gamma):
        self.b = np.array(b, dtype=np.float64)
        self.beta = np.array(beta, dtype=np.float64)
        self.gamma = np.atleast_1d(np.array(gamma, dtype=np.float64))
        if self.b.ndim != 2 or self.b.shape[0] != self.b.shape[1]:
            raise ValueError("b must be square")
        if self.beta.ndim != 3 or self.beta.shape[1] != self.b.shape[0]:
            raise ValueError("beta must be (n_states, n_groups, j_mon)")
        if self.gamma.ndim != 1:
            raise ValueError("gamma must be a vector")
        for a in (self.b, self.beta, self.gamma):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite hyperparameter")
            a.setflags(write=False)

    @classmethod
    def zeros(cls, spec, j_mon, j_dyad):
        return cls(np.zeros((spec.n_groups, spec.n_groups)),
                   np.zeros((spec.n_states, spec.n_groups, j_mon)),
                   np.zeros(j_dyad))

    def copy(self):
        return Hyperparams(self.b.copy(), self.beta.copy(), self.gamma.copy())

    def validate_for(self, spec):
        if self.b.shape != (spec.n_groups, spec.n_groups):
            raise ValueError("b shape disagrees with spec")
        if self.beta.shape[0] != spec.n_states:
            raise ValueError("beta state count disagrees with spec")
        if np.any(self.beta[:, 0, :] != 0.0):
            raise ValueError("reference-group beta slice must be exactly zero")
        if not spec.directed and not np.array_equal(self.b, self.b.T):
            raise ValueError("undirected model requires symmetric b")

    def __repr__(self):
        return (f"Hyperparams(K={self.b.shape[0]}, M={self.beta.shape[0]}, "
                f"j_mon={self.beta.shape[2]}, j_dyad={self.gamma.size})")


@dataclass
class LatentState:
    """One exact latent configuration: states (T,), z[t]/w[t] (D_t,) ints."""

    states: np.ndarray
    z: list
    w: list

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.z = [np.asarray(a, dtype=np.int64) for a in self.z]
        self.w = [np.asarray(a, dtype=np.int64) for a in self.w]
        if self.states.ndim != 1 or len(self.z) != self.states.size \
                or len(self.w) != self.states.size:
            raise ValueError("latent state arrays misaligned")


@dataclass
class GlobalStats:
    """Sufficient statistics: group_counts[t] is (N_t, K); trans_counts is
    (M, M). Holds exact integers for oracle paths, expectations elsewhere."""

    group_counts: list
    trans_counts: np.ndarray
    n_inter: list = field(default_factory=list)

    @property
    def trans_row_sums(self):
        return self.trans_counts.sum(axis=1)


@dataclass
class VariationalParams:
    """Mean-field parameters: phi[t]/psi[t] are (D_t, K) simplex rows for the
    sender/receiver slots, kappa is (T, M) with simplex rows."""

    phi: list
    psi: list
    kappa: np.ndarray

    def validate(self, atol=1e-10):
        for name, rows in (("phi", self.phi), ("psi", self.psi)):
            for t, a in enumerate(rows):
                if a.size and (np.any(a < -atol)
                               or np.max(np.abs(a.sum(axis=1) - 1.0)) > atol):
                    raise ValueError(f"{name}[{t}] rows off the simplex")
        if np.any(self.kappa < -atol) \
                or np.max(np.abs(self.kappa.sum(axis=1) - 1.0)) > atol:
            raise ValueError("kappa rows off the simplex")

    def copy(self):
        return VariationalParams([a.copy() for a in self.phi],
                                 [a.copy() for a in self.psi],
                                 self.kappa.copy())


# ---------------------------------------------------------------------------
# probability kernels
# ---------------------------------------------------------------------------

def dirichlet_alphas(x, beta):
    """Per-node Dirichlet concentrations alpha[i, m, k] = exp(x_i . beta[m, k]).

    Parameters
    ----------
    x : (N, J_x) array
    beta : (M, K, J_x) array

    Returns
    -------
    (N, M, K) positive array.

    Raises
    ------
    ValueError on overflow, naming the largest linear predictor.
    """
    lin = np.einsum("nj,mkj->nmk", x, beta)
    out = np.exp(lin)
    if not np.all(np.isfinite(out)):
        bad = float(np.max(np.abs(lin)))
        raise ValueError(
            f"membership concentration overflow: |x . beta| reaches {bad:.3g}; "
            "rescale the offending monadic covariate")
    return out


def edge_logits(b, gamma, d):
    """Linear predictors b[g, h] + d . gamma for every dyad: (D, K, K)."""
    shift = d @ gamma if gamma.size else np.zeros(d.shape[0])
    return b[None, :, :] + shift[:, None, None]


def edge_probs(b, gamma, d):
    """Edge probabilities, clamped to [THETA_EPS, 1 - THETA_EPS]."""
    return np.clip(expit(edge_logits(b, gamma, d)), THETA_EPS, 1.0 - THETA_EPS)


def edge_prob(b_gh, d_row, gamma):
    """Scalar convenience: probability of an edge for one dyad and group pair."""
    z = float(b_gh) + float(np.dot(np.atleast_1d(d_row), gamma)) if np.size(gamma) \
        else float(b_gh)
    if not np.isfinite(z):
        raise ValueError("non-finite edge linear predictor")
    return float(np.clip(expit(z), THETA_EPS, 1.0 - THETA_EPS))


def interaction_norms(net, spec):
    """Per-period normalization counts for the membership term.

    The exact mode counts the group-indicator slots each node owns; the
    compatibility mode substitutes the constant 2 * N_t for every node.
    """
    if spec.count_mode == "interactions":
        return net.interaction_counts()
    return [np.full(net.n_present(t), 2.0 * net.n_present(t))
            for t in range(net.n_periods)]


def compute_stats(net, latent, spec=None):
    """Exact sufficient statistics of one latent configuration.

    Returns GlobalStats with integer-valued group counts C (one tally per
    indicator slot) and the M x M transition-count matrix U.
    """
    T = net.n_periods
    if len(latent.z) != T:
        raise ValueError("latent configuration does not cover all periods")
    k_groups = 1 + max((int(a.max()) for a in latent.z + latent.w if a.size),
                       default=0)
    if spec is not None:
        if k_groups > spec.n_groups:
            raise ValueError("latent group index outside spec.n_groups")
        if latent.states.max(initial=0) >= spec.n_states:
            raise ValueError("latent state index outside spec.n_states")
        k_groups = spec.n_groups
    counts = []
    for t in range(T):
        n_t = net.n_present(t)
        if latent.z[t].shape != net.senders[t].shape \
                or latent.w[t].shape != net.receivers[t].shape:
            raise ValueError(f"period {t}: latent entries missing for some dyads")
        c = np.zeros((n_t, k_groups))
        np.add.at(c, (net.senders[t], latent.z[t]), 1.0)
        np.add.at(c, (net.receivers[t], latent.w[t]), 1.0)
        counts.append(c)
    m_states = int(latent.states.max()) + 1 if spec is None else spec.n_states
    u = np.zeros((m_states, m_states))
    for t in range(1, T):
        u[latent.states[t - 1], latent.states[t]] += 1.0
    n_inter = (interaction_norms(net, spec) if spec is not None
               else net.interaction_counts())
    return GlobalStats(counts, u, list(n_inter))


def _check_finite(value, term):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite collapsed-posterior term: {term}")
    return value


def log_collapsed_posterior(net, latent, hyper, spec):
    """Log of the unnormalized collapsed joint at one latent configuration.

    Three additive blocks: the hidden-state transition block (Dirichlet rows
    integrated out, plus the uniform initial-state mass), the per-node-period
    Dirichlet-multinomial membership block under the active state, and the
    Bernoulli edge block. All Gamma ratios go through log-Gamma.
    """
    hyper.validate_for(spec)
    m_states, eta = spec.n_states, spec.eta
    stats = compute_stats(net, latent, spec)
    total = -np.log(m_states)  # uniform initial state

    if net.n_periods > 1:
        u = stats.trans_counts
        row = stats.trans_row_sums
        hmm = (gammaln(m_states * eta) - gammaln(m_states * eta + row)).sum()
        hmm += (gammaln(eta + u) - gammaln(eta)).sum()
        total += _check_finite(hmm, "state-transition block")

    norms = stats.n_inter
    for t in range(net.n_periods):
        m = int(latent.states[t])
        alpha = dirichlet_alphas(net.x[t], hyper.beta[m][None])[:, 0, :]
        xi = alpha.sum(axis=1)
        memb = (gammaln(xi) - gammaln(xi + norms[t])).sum()
        memb += (gammaln(alpha + stats.group_counts[t]) - gammaln(alpha)).sum()
        total += _check_finite(memb, f"membership block at period {t}")

    for t in range(net.n_periods):
        if not net.n_dyads(t):
            continue
        theta = edge_probs(hyper.b, hyper.gamma, net.d[t])
        sel = theta[np.arange(theta.shape[0]), latent.z[t], latent.w[t]]
        yt = net.y[t]
        edge = (yt * np.log(sel) + (1.0 - yt) * np.log1p(-sel)).sum()
        total += _check_finite(edge, f"edge block at period {t}")

    return float(total)
