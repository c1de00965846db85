"""Delimited-text ingestion and model serialization.

Input schema (comma-delimited, UTF-8, header row required, columns by
position):

* edges:   time, sender, receiver, outcome (0/1)
* monadic: time, node, covariate columns...   (defines who is present when)
* dyadic:  time, sender, receiver, covariate columns...  (optional)

Sparse-first: the edges file usually lists only realized ties, and
``dense=True`` expands every present ordered pair (unordered for undirected
networks) with outcome 0 unless listed. Missing covariate cells are the empty
string or ``NA``; by default each affected column gains a was-missing
indicator and the holes become zeros.

Fitted models serialize to a versioned JSON document. Floats go through
Python's shortest-repr encoding, which round-trips float64 exactly.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .model import GlobalStats, Hyperparams, ModelSpec, VariationalParams
from .network import DynamicNetwork
from .vem import FittedModel

__all__ = ["load_network", "expand_missing", "write_network", "save_model",
           "load_model", "MODEL_SCHEMA_VERSION"]

MODEL_SCHEMA_VERSION = "dynblock-model-v1"
_NA_TOKENS = {"", "NA"}


class ParseError(ValueError):
    """Malformed input file; message carries file and line number."""


def _fail(path, line_no, msg):
    raise ParseError(f"{path}:{line_no}: {msg}")


def _read_rows(path, min_cols):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            _fail(path, 1, "missing header row")
        if len(header) < min_cols:
            _fail(path, 1, f"expected at least {min_cols} columns")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                _fail(path, line_no, f"expected {len(header)} fields, "
                                     f"got {len(row)}")
            rows.append((line_no, [v.strip() for v in row]))
    return [h.strip() for h in header], rows


def _cell(path, line_no, token):
    if token in _NA_TOKENS:
        return np.nan
    try:
        return float(token)
    except ValueError:
        _fail(path, line_no, f"cannot parse numeric field {token!r}")


def _sort_key(tokens):
    """Numeric order when every token parses as an integer, else lexical."""
    try:
        return {tok: int(tok) for tok in tokens}
    except ValueError:
        return {tok: tok for tok in tokens}


def expand_missing(values, names):
    """Missing-indicator treatment of a covariate matrix.

    For each column containing NaN: append a 0/1 was-missing column named
    ``<name>_missing`` and zero-fill the holes. Columns without missingness
    pass through. A fully missing column is an error.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected a 2-d covariate matrix")
    out_cols, out_names = [], []
    indicator_cols, indicator_names = [], []
    for j, name in enumerate(names):
        col = values[:, j]
        hole = np.isnan(col)
        if hole.all() and col.size:
            raise ValueError(f"covariate {name!r} is missing in every row")
        if hole.any():
            filled = np.where(hole, 0.0, col)
            indicator_cols.append(hole.astype(np.float64))
            indicator_names.append(f"{name}_missing")
            out_cols.append(filled)
        else:
            out_cols.append(col)
        out_names.append(name)
    cols = out_cols + indicator_cols
    stacked = (np.column_stack(cols) if cols
               else values.reshape(values.shape[0], 0))
    return stacked, out_names + indicator_names


def load_network(edges_path, monadic_path, dyadic_path=None, *,
                 directed=True, dense=False, intercept=True,
                 handle_missing=True):
    """Parse the three delimited files into a DynamicNetwork.

    The monadic file defines the node and period registries: a node is
    present in a period iff it has a monadic row there. Returns the network;
    period labels and node ids are kept verbatim (sorted numerically when
    every token is an integer).
    """
    mon_header, mon_rows = _read_rows(monadic_path, 2)
    x_names = mon_header[2:]

    times = sorted({r[0] for _, r in mon_rows},
                   key=_sort_key({r[0] for _, r in mon_rows}).get)
    nodes = sorted({r[1] for _, r in mon_rows},
                   key=_sort_key({r[1] for _, r in mon_rows}).get)
    t_index = {tok: t for t, tok in enumerate(times)}
    node_index = {tok: i for i, tok in enumerate(nodes)}

    mon_seen = [dict() for _ in times]
    for line_no, row in mon_rows:
        t = t_index[row[0]]
        i = node_index[row[1]]
        if i in mon_seen[t]:
            _fail(monadic_path, line_no,
                  f"duplicate monadic row for node {row[1]!r} at time {row[0]!r}")
        mon_seen[t][i] = (line_no, [
            _cell(monadic_path, line_no, tok) for tok in row[2:]])

    present = [np.array(sorted(seen), dtype=np.int64) for seen in mon_seen]
    x = []
    for t, seen in enumerate(mon_seen):
        mat = np.array([seen[i][1] for i in sorted(seen)],
                       dtype=np.float64).reshape(len(seen), len(x_names))
        x.append(mat)

    if handle_missing:
        if x_names:
            stacked = np.concatenate(x, axis=0)
            stacked, x_names = expand_missing(stacked, x_names)
            splits = np.cumsum([m.shape[0] for m in x])[:-1]
            x = list(np.split(stacked, splits, axis=0))

    if intercept:
        x = [np.column_stack([np.ones(m.shape[0]), m]) for m in x]
        x_names = ["intercept"] + list(x_names)

    local = []
    for t in range(len(times)):
        lut = {int(g): j for j, g in enumerate(present[t])}
        local.append(lut)

    # dyadic covariates keyed by (t, local sender, local receiver)
    d_names = []
    dyad_cov = [dict() for _ in times]
    if dyadic_path is not None:
        dy_header, dy_rows = _read_rows(dyadic_path, 3)
        d_names = dy_header[3:]
        for line_no, row in dy_rows:
            if row[0] not in t_index:
                _fail(dyadic_path, line_no, f"unknown time {row[0]!r}")
            t = t_index[row[0]]
            for tok in (row[1], row[2]):
                if tok not in node_index or \
                        node_index[tok] not in local[t]:
                    _fail(dyadic_path, line_no,
                          f"node {tok!r} not present at time {row[0]!r}")
            a = local[t][node_index[row[1]]]
            b = local[t][node_index[row[2]]]
            if not directed and a > b:
                a, b = b, a
            if a == b:
                _fail(dyadic_path, line_no, "self-loop dyad")
            if (a, b) in dyad_cov[t]:
                _fail(dyadic_path, line_no,
                      f"duplicate dyadic row for ({row[1]!r}, {row[2]!r}) "
                      f"at time {row[0]!r}")
            dyad_cov[t][(a, b)] = [
                _cell(dyadic_path, line_no, tok) for tok in row[3:]]

    edge_header, edge_rows = _read_rows(edges_path, 4)
    edge_y = [dict() for _ in times]
    for line_no, row in edge_rows:
        if row[0] not in t_index:
            _fail(edges_path, line_no, f"unknown time {row[0]!r}")
        t = t_index[row[0]]
        for tok in (row[1], row[2]):
            if tok not in node_index or node_index[tok] not in local[t]:
                _fail(edges_path, line_no,
                      f"node {tok!r} not present at time {row[0]!r}")
        a = local[t][node_index[row[1]]]
        b = local[t][node_index[row[2]]]
        if not directed and a > b:
            a, b = b, a
        if a == b:
            _fail(edges_path, line_no, "self-loop edge")
        if (a, b) in edge_y[t]:
            _fail(edges_path, line_no,
                  f"duplicate edge row for ({row[1]!r}, {row[2]!r}) "
                  f"at time {row[0]!r}")
        val = _cell(edges_path, line_no, row[3])
        if val not in (0.0, 1.0):
            _fail(edges_path, line_no,
                  f"outcome must be 0 or 1, got {row[3]!r}")
        edge_y[t][(a, b)] = val

    senders, receivers, y, d = [], [], [], []
    jd = len(d_names)
    for t in range(len(times)):
        if dense:
            n_t = present[t].size
            pairs = [(a, b) for a in range(n_t) for b in range(n_t)
                     if a != b and (directed or a < b)]
        else:
            pairs = sorted(edge_y[t])
        senders.append(np.array([p[0] for p in pairs], dtype=np.int64))
        receivers.append(np.array([p[1] for p in pairs], dtype=np.int64))
        y.append(np.array([edge_y[t].get(p, 0.0) for p in pairs]))
        d.append(np.array([dyad_cov[t].get(p, [0.0] * jd) for p in pairs],
                          dtype=np.float64).reshape(len(pairs), jd))

    if handle_missing and d_names:
        stacked = np.concatenate(d, axis=0)
        stacked, d_names = expand_missing(stacked, d_names)
        splits = np.cumsum([m.shape[0] for m in d])[:-1]
        d = list(np.split(stacked, splits, axis=0))

    return DynamicNetwork(nodes, present, x, senders, receivers, y, d,
                          directed=directed, x_names=x_names,
                          d_names=d_names, period_labels=times)


def write_network(net, edges_path, monadic_path, dyadic_path=None, *,
                  sparse=True, intercept_column=False):
    """Inverse of load_network in the same three-file schema.

    With ``sparse=True`` only realized ties land in the edges file (load back
    with ``dense=True``). The auto-prepended intercept column is dropped
    unless ``intercept_column`` asks to keep it.
    """
    x_names = net.x_names
    drop_first = (not intercept_column and x_names
                  and x_names[0] == "intercept")
    with open(monadic_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "node"]
                        + (x_names[1:] if drop_first else x_names))
        for t in range(net.n_periods):
            label = net.period_labels[t]
            for j, g in enumerate(net.present[t]):
                covs = net.x[t][j, 1:] if drop_first else net.x[t][j]
                writer.writerow([label, net.node_ids[g]]
                                + [repr(float(v)) for v in covs])

    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "sender", "receiver", "y"])
        for t in range(net.n_periods):
            label = net.period_labels[t]
            pres = net.present[t]
            for idx in range(net.n_dyads(t)):
                val = net.y[t][idx]
                if sparse and val == 0.0:
                    continue
                writer.writerow([label,
                                 net.node_ids[pres[net.senders[t][idx]]],
                                 net.node_ids[pres[net.receivers[t][idx]]],
                                 int(val)])

    if dyadic_path is not None and net.j_dyad:
        with open(dyadic_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "sender", "receiver"] + net.d_names)
            for t in range(net.n_periods):
                label = net.period_labels[t]
                pres = net.present[t]
                for idx in range(net.n_dyads(t)):
                    writer.writerow(
                        [label,
                         net.node_ids[pres[net.senders[t][idx]]],
                         net.node_ids[pres[net.receivers[t][idx]]]]
                        + [repr(float(v)) for v in net.d[t][idx]])


def _arr(a):
    return np.asarray(a, dtype=np.float64)


def save_model(fitted, path):
    """Write a FittedModel to a versioned JSON document."""
    spec = fitted.spec
    doc = {
        "schema": MODEL_SCHEMA_VERSION,
        "spec": {
            "n_groups": spec.n_groups, "n_states": spec.n_states,
            "directed": spec.directed, "eta": spec.eta,
            "mu_b": spec.mu_b, "sd_b": spec.sd_b,
            "mu_gamma": spec.mu_gamma, "sd_gamma": spec.sd_gamma,
            "mu_beta": spec.mu_beta, "sd_beta": spec.sd_beta,
            "count_mode": spec.count_mode,
        },
        "hyper": {"b": fitted.hyper.b.tolist(),
                  "beta": fitted.hyper.beta.tolist(),
                  "gamma": fitted.hyper.gamma.tolist()},
        "vparams": {"phi": [p.tolist() for p in fitted.vparams.phi],
                    "psi": [p.tolist() for p in fitted.vparams.psi],
                    "kappa": fitted.vparams.kappa.tolist()},
        "stats": {"group_counts": [c.tolist()
                                   for c in fitted.stats.group_counts],
                  "trans_counts": fitted.stats.trans_counts.tolist(),
                  "n_inter": [v.tolist() for v in fitted.stats.n_inter]},
        "lower_bound": fitted.lower_bound,
        "pi_hat": [p.tolist() for p in fitted.pi_hat],
        "trans_hat": fitted.trans_hat.tolist(),
        "n_iter": fitted.n_iter,
        "converged": fitted.converged,
        "history": fitted.history,
        "se": None if fitted.se is None else
              {k: _arr(v).tolist() for k, v in fitted.se.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path):
    """Read a model document written by save_model; full-precision arrays."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt or truncated model file {path}: "
                             f"{exc}") from None
    version = doc.get("schema")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(f"model schema {version!r} not supported; "
                         f"expected {MODEL_SCHEMA_VERSION!r}")
    spec = ModelSpec(**doc["spec"])
    hyper = Hyperparams(b=_arr(doc["hyper"]["b"]),
                        beta=_arr(doc["hyper"]["beta"]),
                        gamma=_arr(doc["hyper"]["gamma"]))
    vparams = VariationalParams(
        phi=[_arr(p) for p in doc["vparams"]["phi"]],
        psi=[_arr(p) for p in doc["vparams"]["psi"]],
        kappa=_arr(doc["vparams"]["kappa"]))
    stats = GlobalStats(
        group_counts=[_arr(c) for c in doc["stats"]["group_counts"]],
        trans_counts=_arr(doc["stats"]["trans_counts"]),
        n_inter=[_arr(v) for v in doc["stats"]["n_inter"]])
    se = doc["se"]
    if se is not None:
        se = {k: _arr(v) for k, v in se.items()}
    return FittedModel(
        spec=spec, hyper=hyper, vparams=vparams, stats=stats,
        lower_bound=float(doc["lower_bound"]),
        pi_hat=[_arr(p) for p in doc["pi_hat"]],
        trans_hat=_arr(doc["trans_hat"]),
        n_iter=int(doc["n_iter"]), converged=bool(doc["converged"]),
        history=doc.get("history", {}), se=se)
