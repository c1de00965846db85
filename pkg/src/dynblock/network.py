"""Time-indexed dyadic network container.

Periods are stored column-oriented: per period we keep the sorted global
indices of present nodes, their monadic covariate rows, and flat arrays of
modeled dyads (sender, receiver, outcome, dyadic covariates). Dyad endpoint
arrays hold *local* indices into the period's presence list so that count
tallies reduce to ``np.bincount``.

Undirected networks store each dyad once with local sender < receiver; the
sender slot owns the z group indicator, the receiver slot the w indicator.
"""

from __future__ import annotations

import numpy as np

__all__ = ["DynamicNetwork"]


def _frozen(a, dtype):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


class DynamicNetwork:
    """Immutable dynamic network with monadic and dyadic covariates.

    Parameters
    ----------
    node_ids : sequence of str
        Stable global node labels; positions define global indices.
    present : list of int arrays
        Per period, sorted global indices of present nodes.
    x : list of float arrays
        Per period, (N_t, J_x) monadic covariates aligned with `present`.
    senders, receivers : list of int arrays
        Per period, (D_t,) local endpoint indices into `present[t]`.
    y : list of float arrays
        Per period, (D_t,) binary edge outcomes.
    d : list of float arrays
        Per period, (D_t, J_d) dyadic covariates.
    directed : bool
        Undirected networks require sender < receiver per dyad.
    x_names, d_names : sequence of str, optional
        Covariate column labels; defaulted when omitted.
    """

    def __init__(self, node_ids, present, x, senders, receivers, y, d,
                 directed=True, x_names=None, d_names=None,
                 period_labels=None):
        self.node_ids = [str(v) for v in node_ids]
        self.directed = bool(directed)
        if period_labels is None:
            period_labels = [str(t) for t in range(len(present))]
        if len(period_labels) != len(present):
            raise ValueError("one period label per period required")
        self.period_labels = [str(v) for v in period_labels]
        T = len(present)
        if not (len(x) == len(senders) == len(receivers) == len(y) == len(d) == T):
            raise ValueError("per-period lists must share one length")
        if T == 0:
            raise ValueError("network needs at least one period")

        self.present = [_frozen(p, np.int64) for p in present]
        self.x = [_frozen(v, np.float64) for v in x]
        self.senders = [_frozen(s, np.int64) for s in senders]
        self.receivers = [_frozen(r, np.int64) for r in receivers]
        self.y = [_frozen(v, np.float64) for v in y]
        self.d = [np.asarray(v, dtype=np.float64).reshape(len(y[t]), -1)
                  for t, v in enumerate(d)]
        for v in self.d:
            v.setflags(write=False)

        jx = self.x[0].shape[1] if self.x[0].ndim == 2 else 0
        jd = self.d[0].shape[1]
        n_global = len(self.node_ids)
        for t in range(T):
            pres, xt = self.present[t], self.x[t]
            s, r, yt, dt = self.senders[t], self.receivers[t], self.y[t], self.d[t]
            n_t = pres.size
            if n_t == 0:
                raise ValueError(f"period {t}: empty presence set")
            if np.any(np.diff(pres) <= 0):
                raise ValueError(f"period {t}: presence indices must be sorted and unique")
            if pres[0] < 0 or pres[-1] >= n_global:
                raise ValueError(f"period {t}: presence index out of registry range")
            if xt.shape != (n_t, jx):
                raise ValueError(f"period {t}: X shape {xt.shape} != ({n_t}, {jx})")
            if not np.all(np.isfinite(xt)):
                raise ValueError(f"period {t}: non-finite monadic covariate")
            if s.shape != r.shape or s.ndim != 1:
                raise ValueError(f"period {t}: malformed dyad arrays")
            if s.size:
                if s.min() < 0 or r.min() < 0 or s.max() >= n_t or r.max() >= n_t:
                    raise ValueError(f"period {t}: dyad endpoint outside presence set")
                if np.any(s == r):
                    raise ValueError(f"period {t}: self-loop dyad")
                if not self.directed and np.any(s >= r):
                    raise ValueError(f"period {t}: undirected dyads must have sender < receiver")
                key = s * n_t + r
                if np.unique(key).size != key.size:
                    raise ValueError(f"period {t}: duplicate dyad")
            if yt.shape != s.shape or dt.shape != (s.size, jd):
                raise ValueError(f"period {t}: outcome/covariate arrays misaligned with dyads")
            if yt.size and not np.all((yt == 0.0) | (yt == 1.0)):
                raise ValueError(f"period {t}: non-binary outcome")
            if not np.all(np.isfinite(dt)):
                raise ValueError(f"period {t}: non-finite dyadic covariate")

        self.x_names = list(x_names) if x_names is not None else [f"x{j}" for j in range(jx)]
        self.d_names = list(d_names) if d_names is not None else [f"d{j}" for j in range(jd)]
        if len(self.x_names) != jx or len(self.d_names) != jd:
            raise ValueError("covariate name lists misaligned with columns")
        self._n_inter = None

    # -- basic dimensions -------------------------------------------------

    @property
    def n_periods(self):
        return len(self.present)

    @property
    def n_nodes(self):
        return len(self.node_ids)

    @property
    def j_mon(self):
        return self.x[0].shape[1]

    @property
    def j_dyad(self):
        return self.d[0].shape[1]

    def n_present(self, t):
        return self.present[t].size

    def n_dyads(self, t):
        return self.senders[t].size

    @property
    def total_dyads(self):
        return int(sum(s.size for s in self.senders))

    # -- derived quantities ------------------------------------------------

    def interaction_counts(self):
        """Per period, (N_t,) count of group-indicator slots each node owns."""
        if self._n_inter is None:
            out = []
            for t in range(self.n_periods):
                n_t = self.n_present(t)
                c = (np.bincount(self.senders[t], minlength=n_t)
                     + np.bincount(self.receivers[t], minlength=n_t))
                c = c.astype(np.float64)
                c.setflags(write=False)
                out.append(c)
            self._n_inter = out
        return self._n_inter

    def local_index(self, t):
        """Map global node index -> local position at period t (-1 if absent)."""
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        out[self.present[t]] = np.arange(self.n_present(t))
        return out

    # -- derived views -----------------------------------------------------

    def window(self, n_first):
        """Sub-network of the first `n_first` periods."""
        if not 1 <= n_first <= self.n_periods:
            raise ValueError("window length out of range")
        k = n_first
        return DynamicNetwork(
            self.node_ids, self.present[:k], self.x[:k], self.senders[:k],
            self.receivers[:k], self.y[:k], self.d[:k], directed=self.directed,
            x_names=self.x_names, d_names=self.d_names,
            period_labels=self.period_labels[:k])

    def keep_dyads(self, masks):
        """Copy with per-period boolean masks applied to the dyad arrays."""
        if len(masks) != self.n_periods:
            raise ValueError("one mask per period required")
        senders, receivers, y, d = [], [], [], []
        for t, m in enumerate(masks):
            m = np.asarray(m, dtype=bool)
            if m.shape != self.senders[t].shape:
                raise ValueError(f"period {t}: mask shape mismatch")
            senders.append(self.senders[t][m])
            receivers.append(self.receivers[t][m])
            y.append(self.y[t][m])
            d.append(self.d[t][m])
        return DynamicNetwork(self.node_ids, self.present, self.x, senders,
                              receivers, y, d, directed=self.directed,
                              x_names=self.x_names, d_names=self.d_names,
                              period_labels=self.period_labels)

    def intercept_only(self):
        """Copy with the monadic design reduced to a lone intercept column."""
        ones = [np.ones((self.n_present(t), 1)) for t in range(self.n_periods)]
        return DynamicNetwork(self.node_ids, self.present, ones, self.senders,
                              self.receivers, self.y, self.d,
                              directed=self.directed, x_names=["intercept"],
                              d_names=self.d_names,
                              period_labels=self.period_labels)

    def __repr__(self):
        return (f"DynamicNetwork(nodes={self.n_nodes}, periods={self.n_periods}, "
                f"dyads={self.total_dyads}, directed={self.directed}, "
                f"j_mon={self.j_mon}, j_dyad={self.j_dyad})")
