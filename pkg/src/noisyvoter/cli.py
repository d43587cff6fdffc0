"""Command-line interface: ``noisyvoter <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 exact computation too large,
4 critical-point bracket failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import coupling, enhancement, genealogy, qinf, renormalization
from .dynamics import InitialCondition, run_forward
from .errors import BracketFailure, InfeasibleSize
from .lattice import LatticeWindow, ModelParams
from .records import ExperimentConfig, ResultRecord, parse_q, render_spacetime, write_atomic

COMMANDS = ("simulate", "theta", "critical", "box", "enhance", "couple", "qinf")

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_BRACKET = 4


class UsageError(Exception):
    pass


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags given on the command line win")
    common.add_argument("--delta", type=float)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--q", type=parse_q, help="number of colors or 'inf'")
    common.add_argument("--width", type=int)
    common.add_argument("--height", type=int)
    common.add_argument("--boundary", choices=("periodic", "free"))
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--depth", type=int)
    common.add_argument("--s", type=float)
    common.add_argument("--k", type=int, help="box half-unit (default depth * delta / 4)")
    common.add_argument("--h", type=float, help="finite-difference step")
    common.add_argument("--threshold", type=float)
    common.add_argument("--iterations", type=int)
    common.add_argument("--init", choices=("iid", "constant"))
    common.add_argument("--test", help="sub-experiment selector")
    common.add_argument("--exact", action="store_const", const=True)
    common.add_argument("--eps-grid", dest="eps_grid", type=_floats)
    common.add_argument("--s-grid", dest="s_grid", type=_floats)
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--image", help="PNM output path")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--save-config", dest="save_config", help="write the resolved config")

    parser = argparse.ArgumentParser(prog="noisyvoter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "forward color dynamics on a window",
        "theta": "survival probability of the dual cluster",
        "critical": "bisection for the percolation threshold in epsilon",
        "box": "renormalization box events and certificate",
        "enhance": "enhanced survival, pivotality and derivative checks",
        "couple": "coupled discrepancy processes and the ergodicity threshold",
        "qinf": "W-cluster decay, permutation invariance, q = infinity coupling",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    base = {"command": args.command}
    if args.config:
        with open(args.config) as fh:
            loaded = ExperimentConfig.parse(fh.read())
        base = dataclasses.asdict(loaded)
        base["command"] = args.command
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "command":
            base[f.name] = v
    return ExperimentConfig(**base)


def _params(cfg: ExperimentConfig) -> ModelParams:
    return ModelParams(cfg.delta, cfg.epsilon, cfg.q)


def _window(cfg: ExperimentConfig) -> LatticeWindow:
    return LatticeWindow(cfg.width, cfg.height, cfg.boundary)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg):
    params = _params(cfg)
    window = _window(cfg)
    init = InitialCondition.iid() if cfg.init == "iid" else InitialCondition.constant(0)
    run = run_forward(init, params, window, cfg.seed)
    rows = []
    for i in range(window.height):
        for z, v in zip(window.positions(i), run.values[i]):
            rows.append([i, int(window.t0 + i), int(z), int(v), int(run.arrows.codes[i][window.site_of(int(z), i)])])
    rec = ResultRecord(cfg, {"distinct_values_last_row": int(len(np.unique(run.values[-1])))},
                       exact=False, rows=rows, columns=("row", "t", "z", "value", "arrow"))
    images = {}
    if cfg.image:
        images[cfg.image] = render_spacetime(run.values, window, q=params.q)
    return rec, images


def cmd_theta(cfg):
    params = _params(cfg)
    if cfg.exact:
        prof = genealogy.exact_theta_profile(params, cfg.depth)
        est = genealogy.exact_theta_n(params, cfg.depth)
        rows = [[n, float(p), 0.0, True] for n, p in enumerate(prof)]
    else:
        depths = genealogy.cluster_depths(params, cfg.depth, cfg.replicas, cfg.seed)
        prof = genealogy.survival_profile(depths, cfg.depth)
        est = prof[-1]
        rows = [[e.n, e.p_hat, e.stderr, False] for e in prof]
    rec = ResultRecord(cfg, {"n": cfg.depth, "theta": est.p_hat, "stderr": est.stderr,
                             "exact": est.exact, "branching_mean": genealogy.branching_mean(params)},
                       exact=est.exact, rows=rows, columns=("n", "theta", "stderr", "exact"))
    return rec, {}


def cmd_critical(cfg):
    est = genealogy.estimate_epsilon_c(cfg.delta, cfg.depth, cfg.replicas, cfg.threshold,
                                       cfg.seed, cfg.iterations)
    res = dataclasses.asdict(est)
    res["midpoint"] = est.midpoint
    return ResultRecord(cfg, res), {}


def cmd_box(cfg):
    params = _params(cfg)
    n = cfg.depth
    k = cfg.k or max(1, int(round(n * cfg.delta / 4)))
    box = renormalization.BoxSpec(k, n)
    cert = renormalization.renorm_certificate(params, box, cfg.replicas, cfg.seed)
    res = cert.as_dict()
    try:
        clt = renormalization.clt_box_bound(n, cfg.delta)
        res["clt"] = dataclasses.asdict(clt)
    except ValueError:
        res["clt"] = None
    ses = [genealogy.binomial_stderr(int(round(p * cfg.replicas)), cfg.replicas) for p in cert.p_hat]
    rows = [[int(v), float(p), s] for v, p, s in zip(cert.starts, cert.p_hat, ses)]
    return ResultRecord(cfg, res, rows=rows, columns=("v_offset", "p_hat", "stderr")), {}


def cmd_enhance(cfg):
    params = _params(cfg)
    test = cfg.test or "theta"
    if test == "theta":
        mode = "exact" if cfg.exact else "mc"
        est = enhancement.theta_n_enh(params, cfg.s, cfg.depth, mode, cfg.replicas, cfg.seed)
        base = (genealogy.exact_theta_n(params, cfg.depth) if cfg.exact
                else genealogy.theta_n_mc(params, cfg.depth, cfg.replicas, cfg.seed))
        res = {"n": cfg.depth, "s": cfg.s, "theta_enh": est.p_hat, "stderr": est.stderr,
               "theta_plain": base.p_hat, "stderr_plain": base.stderr}
        return ResultRecord(cfg, res, exact=est.exact), {}
    if test == "russo":
        r = enhancement.russo_check(params, cfg.s, cfg.depth, cfg.h)
        res = {k: getattr(r, k) for k in ("n", "s", "h", "d_eps", "pred_eps", "d_s", "pred_s",
                                          "err_eps", "err_s", "err_eps_half", "err_s_half")}
        res.update(second_order=r.second_order, passed=r.passed)
        return ResultRecord(cfg, res, exact=True), {}
    if test == "inequality":
        eps_grid = cfg.eps_grid or (cfg.epsilon,)
        s_grid = cfg.s_grid or (cfg.s,)
        rows = []
        for e in eps_grid:
            for s in s_grid:
                rep = enhancement.pivotal_inequality_check(params.with_epsilon(e), s, cfg.depth)
                rows.append([e, s, rep.sum_omega, rep.sum_lambda, rep.gamma, rep.passed])
        res = {"all_passed": all(r[-1] for r in rows), "points": len(rows)}
        return ResultRecord(cfg, res, exact=True, rows=rows,
                            columns=("epsilon", "s", "sum_omega", "sum_lambda", "gamma", "passed")), {}
    if test == "pivotal":
        pc = enhancement.pivotal_counts(params, cfg.s, cfg.depth)
        rows = [[l, k, pc.omega[(l, k)], pc.lam[(l, k)]] for (l, k) in sorted(pc.omega)]
        res = {"sum_omega": pc.sum_omega, "sum_lambda": pc.sum_lambda}
        return ResultRecord(cfg, res, exact=True, rows=rows,
                            columns=("level", "index", "omega_pivotal", "lambda_pivotal")), {}
    if test == "gamma":
        return ResultRecord(cfg, {"gamma": enhancement.gamma(cfg.delta, cfg.epsilon, cfg.s)},
                            exact=True), {}
    raise UsageError(f"unknown enhance test {test!r}")


def cmd_couple(cfg):
    params = _params(cfg)
    test = cfg.test or "extinction"
    if test == "extinction":
        st = coupling.extinction_experiment(params, cfg.width, cfg.height, cfg.replicas, cfg.seed,
                                            stop_early=False)
        rows = [[i] + [float(st.density[p][i]) for p in coupling.PROCESSES]
                for i in range(cfg.height + 1)]
        images = {}
        if cfg.image:
            window = LatticeWindow(cfg.width, min(cfg.height, 256) + 1)
            states = list(coupling.run_coupled(params, window, InitialCondition.iid(),
                                               InitialCondition.iid(), cfg.seed, [0]))
            stem = cfg.image[:-4] if cfg.image.endswith((".pgm", ".pnm")) else cfg.image
            for p in ("c", "cprime", "cstar"):
                arr = np.stack([getattr(s, p)[0] for s in states])
                images[f"{stem}_{p}.pgm"] = render_spacetime(arr, window, binary=True)
        return ResultRecord(cfg, st.summary(), rows=rows,
                            columns=("row",) + tuple(f"density_{p}" for p in coupling.PROCESSES)), images
    if test == "transitions":
        tf = coupling.transition_frequencies(params, cfg.width, cfg.height, cfg.replicas, cfg.seed)
        rows = [[l, r, t.trials, t.ones, t.frequency, t.expected, t.stderr, t.within()]
                for (l, r), t in sorted(tf.items())]
        return ResultRecord(cfg, {"all_within": all(r[-1] for r in rows)}, rows=rows,
                            columns=("left", "right", "trials", "ones", "frequency", "expected",
                                     "stderr", "within")), {}
    if test == "critical":
        est = coupling.estimate_epsilon_c_prime(cfg.delta, cfg.q, cfg.width, cfg.height,
                                                cfg.replicas, cfg.seed, iterations=cfg.iterations)
        res = dataclasses.asdict(est)
        res["midpoint"] = est.midpoint
        res["mean_field_bound"] = coupling.mean_field_bound(cfg.q)
        return ResultRecord(cfg, res), {}
    if test == "table":
        rows = [[l, r, coupling.cprime_transition(params, l, r),
                 coupling.cstar_lower_transition(params, cfg.s, l, r)]
                for l in (0, 1) for r in (0, 1)]
        return ResultRecord(cfg, {"mean_field_bound": coupling.mean_field_bound(cfg.q)}, exact=True,
                            rows=rows, columns=("left", "right", "cprime", "cstar_lower")), {}
    raise UsageError(f"unknown couple test {test!r}")


def cmd_qinf(cfg):
    params = _params(cfg)
    test = cfg.test or "decay"
    if test == "decay":
        init = InitialCondition.iid() if cfg.init == "iid" else InitialCondition.constant(0)
        st = qinf.g_decay_profile(params, cfg.depth, cfg.replicas, cfg.seed, init)
        r = st.ratios()
        se = st.ratio_stderr()
        rows = [[i, float(st.sup[i]), float(st.sup_stderr[i]),
                 float(r[i - 1]) if i else None, float(se[i - 1]) if i else None]
                for i in range(cfg.depth + 1)]
        res = {"bound": st.bound, "violating_rows": st.decay_violations()}
        return ResultRecord(cfg, res, rows=rows,
                            columns=("row", "sup_p", "sup_stderr", "ratio", "ratio_stderr")), {}
    if test == "permutation":
        rep = qinf.permutation_invariance_test(params, cfg.width, cfg.height, cfg.replicas, cfg.seed)
        return ResultRecord(cfg, rep.as_dict()), {}
    if test == "coupling":
        rep = qinf.qinf_coupling_check(params, cfg.width, cfg.height, cfg.replicas, cfg.seed)
        return ResultRecord(cfg, rep.as_dict()), {}
    raise UsageError(f"unknown qinf test {test!r}")


HANDLERS = {"simulate": cmd_simulate, "theta": cmd_theta, "critical": cmd_critical,
            "box": cmd_box, "enhance": cmd_enhance, "couple": cmd_couple, "qinf": cmd_qinf}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        cfg = resolve_config(args)
        if args.threads:
            import numba
            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        record, images = HANDLERS[cfg.command](cfg)
        text = record.render(cfg.format)
    except InfeasibleSize as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except BracketFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BRACKET
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    # everything is computed before anything is written
    if args.save_config:
        write_atomic(args.save_config, cfg.emit())
    for path, data in images.items():
        write_atomic(path, data)
    if cfg.out:
        write_atomic(cfg.out, text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
