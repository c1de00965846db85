"""Command-line entry point.

Every subcommand demands an explicit --seed and a run directory (--out);
each run leaves behind config.json (the fully resolved settings), run.log,
and metrics.json, so a run can be reproduced from its directory alone.
Numeric outcomes land in metrics.json; timing goes to the log only, keeping
the metrics file bit-reproducible.

numpy is imported only after --threads is resolved: BLAS pools read their
environment variables at import time.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _add_data_flags(p):
    p.add_argument("--edges", help="edges csv (time,sender,receiver,y)")
    p.add_argument("--monadic", help="monadic covariate csv")
    p.add_argument("--dyadic", help="dyadic covariate csv", default=None)
    p.add_argument("--data-dir",
                   help="directory holding edges.csv/monadic.csv/dyadic.csv "
                        "(e.g. a simulate run); overridden by explicit paths")
    p.add_argument("--dense", action="store_true",
                   help="expand unlisted dyads as zeros")
    p.add_argument("--undirected", action="store_true")
    p.add_argument("--no-intercept", action="store_true",
                   help="do not prepend an intercept column")


def _add_model_flags(p):
    p.add_argument("-k", "--groups", type=int, default=2)
    p.add_argument("-m", "--states", type=int, default=2)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--sd-b", type=float, default=1.0)
    p.add_argument("--sd-gamma", type=float, default=1.0)
    p.add_argument("--sd-beta", type=float, default=1.0)


def _common(p):
    p.add_argument("--seed", type=int, required=True,
                   help="explicit run seed (required)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads (default: "
                        "DYNBLOCK_THREADS env var, else library default)")
    p.add_argument("--config", default=None,
                   help="json file of flag defaults (flags override it)")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dynblock",
        description="dynamic mixed-membership blockmodel with covariates")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic network")
    _common(p)
    p.add_argument("--preset", choices=("easy", "medium", "hard"),
                   default="medium")
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--periods", type=int, default=9)
    p.add_argument("--undirected", action="store_true")

    p = sub.add_parser("fit", help="fit the model")
    _common(p)
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--engine", choices=("vem", "svi"), default="vem")
    p.add_argument("--tol-hyper", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--inner-mstep", type=int, default=50)
    p.add_argument("--batch-nodes", type=int, default=20)
    p.add_argument("--rho-tau", type=float, default=1.0)
    p.add_argument("--rho-p", type=float, default=0.75)
    p.add_argument("--holdout", type=float, default=0.01)
    p.add_argument("--tol-holdout", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--standard-errors", action="store_true",
                   help="compute sampled-Hessian standard errors after the fit")
    p.add_argument("--se-samples", type=int, default=100)

    p = sub.add_parser("predict", help="edge probabilities for observed dyads")
    _common(p)
    _add_data_flags(p)
    p.add_argument("--model", required=True, help="model.json from a fit run")
    p.add_argument("--period", type=int, default=None,
                   help="restrict to one period index")

    p = sub.add_parser("forecast", help="propagate the fitted chain forward")
    _common(p)
    _add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--carry-forward", action="store_true",
                   help="reuse final-period covariates for future steps")

    p = sub.add_parser("effects", help="counterfactual covariate effects")
    _common(p)
    _add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--cap", type=float, default=None)
    p.add_argument("--aggregation",
                   choices=("overall", "by-node", "by-node-year"),
                   default="overall")

    p = sub.add_parser("eval-auroc", help="AUROC of predictions against outcomes")
    _common(p)
    _add_data_flags(p)
    p.add_argument("--model", help="score observed dyads with this model")
    p.add_argument("--table", help="csv with score,label columns instead")

    p = sub.add_parser("online-fit", help="expanding-window refits")
    _common(p)
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--boundaries", required=True,
                   help="comma list of window end periods, e.g. 5,7,9")
    p.add_argument("--tol-hyper", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--inner-mstep", type=int, default=50)
    return ap


def _apply_config_file(ap, argv):
    """Seed parser defaults from --config so explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config:
        with open(known.config, encoding="utf-8") as fh:
            defaults = json.load(fh)
        for action in ap._subparsers._group_actions[0].choices.values():
            action.set_defaults(**{k.replace("-", "_"): v
                                   for k, v in defaults.items()})
    return ap


def _setup_run_dir(args):
    os.makedirs(args.out, exist_ok=True)
    log = logging.getLogger("dynblock")
    log.setLevel(logging.INFO)
    log.handlers.clear()
    fh = logging.FileHandler(os.path.join(args.out, "run.log"), mode="w")
    sh = logging.StreamHandler(sys.stdout)
    for h in (fh, sh):
        h.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(h)
    snapshot = {k: v for k, v in sorted(vars(args).items())
                if k not in ("config",)}
    with open(os.path.join(args.out, "config.json"), "w",
              encoding="utf-8") as fh2:
        json.dump(snapshot, fh2, indent=2, sort_keys=True)
    return log


def _write_metrics(args, metrics):
    with open(os.path.join(args.out, "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)


def _resolve_data_paths(ap, args):
    if getattr(args, "data_dir", None):
        for name, attr in (("edges.csv", "edges"), ("monadic.csv", "monadic"),
                           ("dyadic.csv", "dyadic")):
            path = os.path.join(args.data_dir, name)
            if getattr(args, attr) is None and os.path.exists(path):
                setattr(args, attr, path)
    if not args.edges or not args.monadic:
        ap.error("need --edges and --monadic (or --data-dir)")
    for attr in ("edges", "monadic", "dyadic"):
        path = getattr(args, attr)
        if path is not None and not os.path.exists(path):
            ap.error(f"input file not found: {path}")


def _load_net(args):
    from .dataio import load_network
    return load_network(args.edges, args.monadic, args.dyadic,
                        directed=not args.undirected, dense=args.dense,
                        intercept=not args.no_intercept)


def _spec_from_args(args, directed):
    from .model import ModelSpec
    return ModelSpec(n_groups=args.groups, n_states=args.states,
                     directed=directed, eta=args.eta, sd_b=args.sd_b,
                     sd_gamma=args.sd_gamma, sd_beta=args.sd_beta)


def _cmd_simulate(args, log):
    from .dataio import write_network
    from .simulate import generate, preset

    dgp = preset(args.preset, n_nodes=args.nodes, n_periods=args.periods)
    net, truth = generate(dgp, args.seed, undirected=args.undirected)
    write_network(net, os.path.join(args.out, "edges.csv"),
                  os.path.join(args.out, "monadic.csv"),
                  os.path.join(args.out, "dyadic.csv"))
    with open(os.path.join(args.out, "truth.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"pi": truth["pi"].tolist(),
                   "states": truth["states"].tolist(),
                   "b_probs": truth["b_probs"].tolist(),
                   "gamma": truth["gamma"].tolist()}, fh)
    dens = [float(net.y[t].mean()) if net.n_dyads(t) else 0.0
            for t in range(net.n_periods)]
    log.info("simulated %s: %s", args.preset, net)
    _write_metrics(args, {"preset": args.preset, "nodes": args.nodes,
                          "periods": args.periods,
                          "density_by_period": dens})
    return 0


def _cmd_fit(args, log, ap):
    _resolve_data_paths(ap, args)
    net = _load_net(args)
    spec = _spec_from_args(args, net.directed)
    log.info("loaded %s", net)

    def report(i, value, extra):
        if args.engine == "vem":
            log.info("iter %3d  elbo %.6f  max-hyper-change %.2e",
                     i, value, extra)
        else:
            log.info("step %3d  holdout-ll %.6f", i, value)

    t0 = time.perf_counter()
    if args.engine == "vem":
        from .vem import VemConfig, fit_vem
        cfg = VemConfig(tol_hyper=args.tol_hyper, max_iter=args.max_iter,
                        inner_mstep_iters=args.inner_mstep, seed=args.seed,
                        se_samples=args.se_samples)
        fitted = fit_vem(net, spec, cfg, on_iteration=report)
    else:
        from .svi import SviConfig, fit_svi
        cfg = SviConfig(batch_nodes=args.batch_nodes, tau=args.rho_tau,
                        p_exp=args.rho_p, holdout_frac=args.holdout,
                        tol_holdout=args.tol_holdout, patience=args.patience,
                        max_steps=args.max_steps,
                        inner_mstep_iters=args.inner_mstep, seed=args.seed)
        fitted = fit_svi(net, spec, cfg, on_iteration=report)
    elapsed = time.perf_counter() - t0

    if args.standard_errors:
        from .vem import standard_errors
        fitted.se = standard_errors(net, spec, fitted,
                                    n_samples=args.se_samples,
                                    seed=args.seed)

    from .dataio import save_model
    save_model(fitted, os.path.join(args.out, "model.json"))
    log.info("fit done in %.1fs: lower bound %.6f after %d iterations "
             "(converged=%s)", elapsed, fitted.lower_bound, fitted.n_iter,
             fitted.converged)
    metrics = {"engine": args.engine, "lower_bound": fitted.lower_bound,
               "n_iter": fitted.n_iter, "converged": fitted.converged,
               "trans_hat": fitted.trans_hat.tolist()}
    if args.engine == "svi":
        metrics["stop_reason"] = fitted.history.get("stop_reason")
        metrics["holdout_ll"] = fitted.history.get("holdout_ll")
    else:
        metrics["elbo_trace"] = fitted.history.get("elbo")
    _write_metrics(args, metrics)
    return 0


def _cmd_predict(args, log, ap):
    import numpy as np

    from .dataio import load_model
    from .model import edge_probs

    _resolve_data_paths(ap, args)
    net = _load_net(args)
    fitted = load_model(args.model)
    periods = ([args.period] if args.period is not None
               else range(net.n_periods))
    path = os.path.join(args.out, "predictions.csv")
    total, count = 0.0, 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("period,sender,receiver,prob\n")
        for t in periods:
            if not net.n_dyads(t):
                continue
            theta = edge_probs(fitted.hyper.b, fitted.hyper.gamma, net.d[t])
            pi = fitted.pi_hat[t]
            probs = np.einsum("dg,dgh,dh->d", pi[net.senders[t]], theta,
                              pi[net.receivers[t]])
            pres = net.present[t]
            for i, p in enumerate(probs):
                fh.write(f"{net.period_labels[t]},"
                         f"{net.node_ids[pres[net.senders[t][i]]]},"
                         f"{net.node_ids[pres[net.receivers[t][i]]]},"
                         f"{p!r}\n")
            total += float(probs.sum())
            count += probs.size
    log.info("wrote %s (%d dyads)", path, count)
    _write_metrics(args, {"n_dyads": count,
                          "mean_prob": total / count if count else None})
    return 0


def _cmd_forecast(args, log, ap):
    from .dataio import load_model
    from .predict import forecast

    _resolve_data_paths(ap, args)
    net = _load_net(args)
    fitted = load_model(args.model)
    out = forecast(fitted, net, args.horizon,
                   carry_forward=args.carry_forward)
    path = os.path.join(args.out, "forecast.csv")
    pres = net.present[net.n_periods - 1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,sender,receiver,prob\n")
        for h in range(args.horizon):
            probs = out["probs"][h]
            for i, p in enumerate(probs):
                fh.write(f"{h + 1},"
                         f"{net.node_ids[pres[out['senders'][i]]]},"
                         f"{net.node_ids[pres[out['receivers'][i]]]},"
                         f"{p!r}\n")
    log.info("wrote %s", path)
    _write_metrics(args, {
        "horizon": args.horizon,
        "state_dist": out["state_dist"].tolist(),
        "mean_prob_by_step": [float(p.mean()) for p in out["probs"]]})
    return 0


def _cmd_effects(args, log, ap):
    from .dataio import load_model
    from .predict import covariate_effect

    _resolve_data_paths(ap, args)
    net = _load_net(args)
    fitted = load_model(args.model)
    effect = covariate_effect(fitted, net, args.covariate, args.delta,
                              cap=args.cap, aggregation=args.aggregation)
    path = os.path.join(args.out, "effects.csv")
    if args.aggregation == "overall":
        metrics = {"aggregation": "overall", "effect": effect}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("effect\n")
            fh.write(f"{effect!r}\n")
    elif args.aggregation == "by-node":
        import numpy as np
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("node,effect\n")
            for i, v in enumerate(effect):
                if not np.isnan(v):
                    fh.write(f"{net.node_ids[i]},{v!r}\n")
        valid = [float(v) for v in effect if not np.isnan(v)]
        metrics = {"aggregation": "by-node",
                   "mean_effect": sum(valid) / len(valid) if valid else None}
    else:
        import numpy as np
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("period,node,effect\n")
            for t, col in enumerate(effect):
                for j, v in enumerate(col):
                    if not np.isnan(v):
                        fh.write(f"{net.period_labels[t]},"
                                 f"{net.node_ids[net.present[t][j]]},"
                                 f"{v!r}\n")
        metrics = {"aggregation": "by-node-year"}
    log.info("wrote %s", path)
    _write_metrics(args, metrics)
    return 0


def _cmd_eval_auroc(args, log, ap):
    import numpy as np

    from .predict import auroc

    if args.table:
        if not os.path.exists(args.table):
            ap.error(f"input file not found: {args.table}")
        rows = np.loadtxt(args.table, delimiter=",", skiprows=1, ndmin=2)
        scores, labels = rows[:, 0], rows[:, 1].astype(np.int64)
    else:
        if not args.model:
            ap.error("need --model (or --table)")
        from .dataio import load_model
        from .model import edge_probs
        _resolve_data_paths(ap, args)
        net = _load_net(args)
        fitted = load_model(args.model)
        scores, labels = [], []
        for t in range(net.n_periods):
            if not net.n_dyads(t):
                continue
            theta = edge_probs(fitted.hyper.b, fitted.hyper.gamma, net.d[t])
            pi = fitted.pi_hat[t]
            scores.append(np.einsum("dg,dgh,dh->d", pi[net.senders[t]],
                                    theta, pi[net.receivers[t]]))
            labels.append(net.y[t].astype(np.int64))
        scores = np.concatenate(scores)
        labels = np.concatenate(labels)
    value, sd = auroc(scores, labels)
    log.info("auroc %.4f (sd %.4f) on %d pairs", value, sd, scores.size)
    _write_metrics(args, {"auroc": value, "sd": sd, "n": int(scores.size)})
    return 0


def _cmd_online_fit(args, log, ap):
    _resolve_data_paths(ap, args)
    net = _load_net(args)
    spec = _spec_from_args(args, net.directed)
    try:
        bounds = [int(tok) for tok in args.boundaries.split(",")]
    except ValueError:
        ap.error(f"cannot parse --boundaries {args.boundaries!r}")
    from .dataio import save_model
    from .predict import online_refit
    from .vem import VemConfig

    cfg = VemConfig(tol_hyper=args.tol_hyper, max_iter=args.max_iter,
                    inner_mstep_iters=args.inner_mstep, seed=args.seed)
    fits = online_refit(net, spec, bounds, cfg)
    summary = []
    for b, fitted in zip(bounds, fits):
        path = os.path.join(args.out, f"model_window_{b}.json")
        save_model(fitted, path)
        log.info("window 1..%d: lower bound %.6f after %d iterations",
                 b, fitted.lower_bound, fitted.n_iter)
        summary.append({"end": b, "lower_bound": fitted.lower_bound,
                        "n_iter": fitted.n_iter,
                        "converged": fitted.converged})
    _write_metrics(args, {"windows": summary})
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    _apply_config_file(ap, argv)
    args = ap.parse_args(argv)

    threads = args.threads
    if threads is None and os.environ.get("DYNBLOCK_THREADS"):
        threads = int(os.environ["DYNBLOCK_THREADS"])
    if threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)

    log = _setup_run_dir(args)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args, log)
        if args.command == "fit":
            return _cmd_fit(args, log, ap)
        if args.command == "predict":
            return _cmd_predict(args, log, ap)
        if args.command == "forecast":
            return _cmd_forecast(args, log, ap)
        if args.command == "effects":
            return _cmd_effects(args, log, ap)
        if args.command == "eval-auroc":
            return _cmd_eval_auroc(args, log, ap)
        if args.command == "online-fit":
            return _cmd_online_fit(args, log, ap)
        ap.error(f"unknown command {args.command!r}")
    except (ValueError, FloatingPointError, OSError) as exc:
        log.error("error: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
