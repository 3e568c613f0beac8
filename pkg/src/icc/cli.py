"""Command line surface: simulation, tests, estimation, and the guided workflow.

Every command echoes its configuration and seed into the emitted report, so
a report is enough to rerun the command; with a fixed seed the report bytes
are reproducible.  Exit codes: 0 success, 2 precondition or gate failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .control import build_control, estimate_gamma_tilde
from .data import (
    Dataset,
    IccError,
    SeedSpec,
    default_workers,
    load_csv,
    save_csv,
    write_report,
)
from .debias import (
    build_system,
    check_neyman_orthogonality,
    dml_estimate,
    error_bound,
    perturb_nuisances,
    solve_nuisances,
    verify_error_decomposition,
)
from .discrete import (
    enumerate_joint,
    minimal_discrete_control,
    random_class_model,
    random_discrete_model,
    separable_class_model,
    solve_ls_bridge,
)
from .estimators import METHODS, bias_variance_sweep, estimate
from .htests import rank_test, relevance_test, specification_test
from .lineardgp import LinearDGPSpec, sample_linear, spec_s1
from .monotone import average_causal, estimate_vt

BUILTIN_SPECS = {"s1": spec_s1}


def _load_spec(name: str) -> LinearDGPSpec:
    if name in BUILTIN_SPECS:
        return BUILTIN_SPECS[name]()
    with open(name, encoding="utf-8") as fh:
        return LinearDGPSpec.from_dict(json.load(fh))


def _get_dataset(args) -> tuple[Dataset, dict]:
    """Resolve the data source; exactly one of --data / --spec is allowed."""
    has_data = getattr(args, "data", None) is not None
    has_spec = getattr(args, "spec", None) is not None
    if has_data == has_spec:
        raise ValueError("provide exactly one of --data or --spec")
    if has_data:
        if args.schema is None:
            raise ValueError("--data requires --schema")
        with open(args.schema, encoding="utf-8") as fh:
            schema = json.load(fh)
        loaded = load_csv(args.data, schema)
        if loaded.n_dropped:
            print(f"note: dropped {loaded.n_dropped} rows with missing values",
                  file=sys.stderr)
        return loaded.dataset, {"data": args.data, "schema": args.schema}
    spec = _load_spec(args.spec)
    n = args.n
    if n is None:
        raise ValueError("--spec needs --n to simulate")
    ds = sample_linear(spec, n, SeedSpec(args.seed, stream_id=900))
    return ds, {"spec": args.spec, "n": int(n)}


def _emit(report: dict, text: str, out: str | None) -> None:
    print(text)
    if out:
        write_report(report, out)
        print(f"report written to {out}")


def _fmt_row(values, width=10):
    return "  ".join(f"{v:>{width}}" if isinstance(v, str)
                     else f"{v:>+{width}.4f}" for v in values)


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    ds = sample_linear(spec, args.n, SeedSpec(args.seed, stream_id=900))
    schema = save_csv(ds, args.out)
    schema_path = args.out + ".schema.json"
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(schema, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {ds.n} rows ({ds.d_a} treatment, {ds.d_z} instrument, "
          f"{ds.d_w} proxy, {ds.d_x} covariate columns) to {args.out}")
    print(f"schema written to {schema_path}")
    return 0


def cmd_rank_test(args) -> int:
    ds, src = _get_dataset(args)
    res = rank_test(ds, args.rank, args.boot, SeedSpec(args.seed))
    decision = "reject" if res.p_value <= args.alpha else "keep"
    text = (f"rank test at r={args.rank}: statistic={res.statistic:.4f} "
            f"p={res.p_value:.4f} -> {decision} (alpha={args.alpha:g}, "
            f"B={args.boot}, variant={res.variant})")
    report = {"kind": "rank_test", "config": {**src, "rank": args.rank,
                                              "boot": args.boot,
                                              "alpha": args.alpha,
                                              "seed": args.seed},
              "statistic": res.statistic, "p_value": res.p_value,
              "decision": decision, "variant": res.variant}
    _emit(report, text, args.out)
    return 0


def cmd_relevance_test(args) -> int:
    ds, src = _get_dataset(args)
    gt = estimate_gamma_tilde(ds)
    cf = build_control(ds, gt, args.rank)
    res = relevance_test(ds, cf, args.boot, SeedSpec(args.seed))
    decision = ("instruments move treatment beyond the control"
                if res.p_value <= args.alpha else
                "no detectable instrument relevance beyond the control")
    text = (f"conditional relevance at r={args.rank}: "
            f"R2 gain={res.delta:.4f} p={res.p_value:.4f} -> {decision}")
    report = {"kind": "relevance_test", "config": {**src, "rank": args.rank,
                                                   "boot": args.boot,
                                                   "alpha": args.alpha,
                                                   "seed": args.seed},
              "r2_unrestricted": res.r2_unrestricted,
              "r2_restricted": res.r2_restricted, "delta": res.delta,
              "p_value": res.p_value, "decision": decision,
              "n_failed": res.n_failed}
    _emit(report, text, args.out)
    return 0


def cmd_spec_test(args) -> int:
    ds, src = _get_dataset(args)
    try:
        r1, r2 = (int(v) for v in args.rank.split(","))
    except (AttributeError, ValueError):
        raise ValueError("spec-test needs --rank R1,R2 with R1 < R2")
    gt = estimate_gamma_tilde(ds)
    cf1 = build_control(ds, gt, r1)
    cf2 = build_control(ds, gt, r2)
    res = specification_test(ds, cf1, cf2, args.boot, SeedSpec(args.seed))
    decision = ("estimates differ: the smaller control is insufficient"
                if res.p_value <= args.alpha else
                "no evidence against the smaller control")
    text = (f"specification test r={r1} vs r={r2}: theta1={res.theta1:.4f} "
            f"theta2={res.theta2:.4f} delta={res.delta:+.4f} "
            f"p={res.p_value:.4f} -> {decision}")
    report = {"kind": "spec_test", "config": {**src, "rank": args.rank,
                                              "boot": args.boot,
                                              "alpha": args.alpha,
                                              "seed": args.seed},
              "theta1": res.theta1, "theta2": res.theta2, "delta": res.delta,
              "p_value": res.p_value, "decision": decision}
    _emit(report, text, args.out)
    return 0


def cmd_estimate(args) -> int:
    ds, src = _get_dataset(args)
    methods = list(METHODS) if args.method == "all" else [args.method]
    need_cf = any(m in ("pl", "icc") for m in methods)
    cf = None
    if need_cf:
        gt = estimate_gamma_tilde(ds)
        cf = build_control(ds, gt, args.rank)
    rows = []
    lines = [_fmt_row(["method", "coef", "beta", "se(HC1)"]) ]
    for m in methods:
        res = estimate(ds, m, cf if m in ("pl", "icc") else None,
                       bootstrap_se=args.boot if args.boot else 0,
                       seed=SeedSpec(args.seed) if args.boot else None)
        row = {"method": m, "beta": res.beta.tolist(), "se": res.se.tolist()}
        if res.se_boot is not None:
            row["se_boot"] = res.se_boot.tolist()
        rows.append(row)
        for j, name in enumerate(res.coef_names[1:1 + ds.d_a]):
            lines.append(_fmt_row([m, name, res.beta[j], res.se[j]]))
    report = {"kind": "estimate_set", "config": {**src, "rank": args.rank,
                                                 "method": args.method,
                                                 "boot": args.boot,
                                                 "seed": args.seed},
              "estimates": rows}
    _emit(report, "\n".join(lines), args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = _load_spec(args.spec)
    res = bias_variance_sweep(spec, args.n, args.reps, args.rmax,
                              SeedSpec(args.seed))
    csv_text = res.as_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        print(f"sweep written to {args.out}")
    else:
        print(csv_text, end="")
    return 0


def cmd_workflow(args) -> int:
    ds, src = _get_dataset(args)
    seed = SeedSpec(args.seed)
    alpha = args.alpha
    report = {"kind": "workflow",
              "config": {**src, "boot": args.boot, "alpha": alpha,
                         "seed": args.seed}}
    lines = [f"guided workflow (alpha={alpha:g}, B={args.boot})"]

    # step 1: pick the control rank by testing upward until non-rejection
    rmax = min(ds.d_z, ds.d_w)
    ladder = []
    selected = rmax
    lines.append("step 1: control rank selection")
    for r in range(rmax):
        res = rank_test(ds, r, args.boot, seed.replicate(r))
        reject = res.p_value <= alpha
        ladder.append({"r": r, "statistic": res.statistic,
                       "p_value": res.p_value, "reject": bool(reject)})
        lines.append(f"  r={r}: statistic={res.statistic:.4f} "
                     f"p={res.p_value:.4f} -> "
                     f"{'reject, test next rank' if reject else 'keep'}")
        if not reject:
            selected = r
            break
    report["step1"] = {"ladder": ladder, "selected_rank": selected}
    lines.append(f"  selected control rank: {selected}")
    if selected == 0:
        note = ("no confounding detected: instruments and proxies share no "
                "latent direction, the control is empty and the plain IV "
                "path applies")
        report["step1"]["note"] = note
        lines.append(f"  note: {note}")

    halt = None
    if selected == ds.d_z:
        halt = ("control rank equals the instrument count: conditioning on "
                "the control leaves no instrument variation, so instruments "
                "cannot be relevant for treatment afterwards")
    elif selected == ds.d_w:
        halt = ("control rank equals the proxy count: the proxies have no "
                "spare directions, so whether they span the whole latent "
                "confounder is untestable; continuing would rest on an "
                "unverifiable richness assumption")
    if halt:
        report["halted_at"] = "step1"
        report["advice"] = halt
        lines.append(f"  HALT: {halt}")
        _emit(report, "\n".join(lines), args.out)
        return 2

    # step 2: instruments must still move treatment given the control
    gt = estimate_gamma_tilde(ds)
    cf = build_control(ds, gt, selected)
    rel = relevance_test(ds, cf, args.boot, seed.replicate(1000))
    relevant = rel.p_value <= alpha
    report["step2"] = {"r2_unrestricted": rel.r2_unrestricted,
                       "r2_restricted": rel.r2_restricted,
                       "delta": rel.delta, "p_value": rel.p_value,
                       "relevant": bool(relevant)}
    lines.append("step 2: conditional instrument relevance")
    lines.append(f"  R2 gain of instruments over the control={rel.delta:.4f} "
                 f"p={rel.p_value:.4f}")
    if not relevant:
        halt = ("instruments do not move treatment once the control is held "
                "fixed; the adjusted IV estimand is not identified on this "
                "data")
        report["halted_at"] = "step2"
        report["advice"] = halt
        lines.append(f"  HALT: {halt}")
        _emit(report, "\n".join(lines), args.out)
        return 2
    lines.append("  instruments move treatment beyond the control")

    # step 3: what the control is made of, and how proxies respond to it
    lines.append("step 3: control interpretation")
    interp = {}
    if selected == 0:
        lines.append("  control is empty; nothing to interpret")
        interp["note"] = "empty control"
    else:
        t_vals = cf.apply(ds.z, ds.x)
        interp["t_on_z_loadings"] = cf.z_loadings.tolist()
        lines.append("  loadings of the control on instruments:")
        for k in range(selected):
            terms = " ".join(f"z{j + 1}={cf.z_loadings[j, k]:+.4f}"
                             for j in range(ds.d_z))
            lines.append(f"    t{k + 1}: {terms}")
        design = np.column_stack([np.ones(ds.n), t_vals])
        w_rows = []
        lines.append("  proxy responses to the control (least squares):")
        for j in range(ds.d_w):
            coef, *_ = np.linalg.lstsq(design, ds.w[:, j], rcond=None)
            w_rows.append({"column": f"w{j + 1}", "coef": coef.tolist()})
            terms = " ".join(f"t{k + 1}={coef[1 + k]:+.4f}"
                             for k in range(selected))
            lines.append(f"    w{j + 1}: const={coef[0]:+.4f} {terms}")
        interp["w_on_t"] = w_rows
    report["step3"] = interp

    # step 4: all estimators side by side
    lines.append("step 4: estimates")
    lines.append("  " + _fmt_row(["method", "coef", "beta", "se(HC1)"]))
    rows = []
    for m in METHODS:
        res = estimate(ds, m, cf if m in ("pl", "icc") else None)
        rows.append({"method": m, "beta": res.beta.tolist(),
                     "se": res.se.tolist()})
        for j, name in enumerate(res.coef_names[1:1 + ds.d_a]):
            lines.append("  " + _fmt_row([m, name, res.beta[j], res.se[j]]))
    report["step4"] = {"estimates": rows, "selected_rank": selected}
    _emit(report, "\n".join(lines), args.out)
    return 0


def cmd_dml(args) -> int:
    if getattr(args, "spec", None) is not None:
        raise ValueError("dml runs on recorded data; provide --data/--schema")
    ds, src = _get_dataset(args)
    for name, block in (("z", ds.z), ("w", ds.w), ("a", ds.a)):
        if block.shape[1] != 1:
            raise ValueError(f"dml needs exactly one {name} column")
        vals = block[:, 0]
        if np.any(vals != np.round(vals)) or vals.min() < 0:
            raise ValueError(f"dml needs nonnegative integer codes in {name}")
    z = ds.z[:, 0].astype(int)
    w = ds.w[:, 0].astype(int)
    a = ds.a[:, 0].astype(int)
    y_values, y_idx = np.unique(ds.y, return_inverse=True)
    sizes = (int(z.max()) + 1, int(w.max()) + 1, int(a.max()) + 1)
    contrast = None
    if args.contrast:
        i, j = (int(v) for v in args.contrast.split(","))
        contrast = (i, j)
    obs = np.column_stack([z, w, a, y_idx])
    res = dml_estimate(obs, sizes, y_values, folds=args.folds,
                       seed=SeedSpec(args.seed), contrast=contrast,
                       t_rank=args.t_rank, k_dim=args.k_dim)
    lo, hi = res.ci95
    text = (f"dml estimate: theta={res.theta_hat:.6f} "
            f"sigma={res.sigma_hat:.6f} n={res.n} folds={res.folds}\n"
            f"95% CI [{lo:.6f}, {hi:.6f}]")
    report = {"kind": "dml", "config": {**src, "folds": args.folds,
                                        "contrast": args.contrast,
                                        "t_rank": args.t_rank,
                                        "k_dim": args.k_dim,
                                        "seed": args.seed},
              **res.to_dict()}
    _emit(report, text, args.out)
    return 0


def cmd_monotone(args) -> int:
    ds, src = _get_dataset(args)
    try:
        a0, a1 = (float(v) for v in args.contrast.split(","))
    except (AttributeError, ValueError):
        raise ValueError("monotone needs --contrast A0,A1")
    cf = None
    if args.rank:
        gt = estimate_gamma_tilde(ds)
        cf = build_control(ds, gt, args.rank)
    cell_target = None if args.cells == "auto" else int(args.cells)
    mc = estimate_vt(ds, cf, cell_target=cell_target, smoother=args.smoother)
    res = average_causal(ds, mc, [a0, a1], [-1.0, 1.0], boot=args.boot,
                         seed=SeedSpec(args.seed), workers=args.workers)
    if res.se is None:
        text = f"monotone contrast ({a0:g} -> {a1:g}): theta={res.theta_hat:.6f}"
    else:
        lo, hi = res.ci95
        text = (f"monotone contrast ({a0:g} -> {a1:g}): "
                f"theta={res.theta_hat:.6f} se={res.se:.6f} "
                f"95% CI [{lo:.6f}, {hi:.6f}]")
    report = {"kind": "monotone", "config": {**src, "contrast": args.contrast,
                                             "cells": args.cells,
                                             "smoother": args.smoother,
                                             "rank": args.rank,
                                             "boot": args.boot,
                                             "seed": args.seed},
              **res.to_dict(),
              "control_meta": mc.meta}
    _emit(report, text, args.out)
    return 0


def cmd_oracle_verify(args) -> int:
    seed = SeedSpec(args.seed)
    n_models = args.models
    failures: list[str] = []

    # conditional-independence closure of the minimal control
    for i in range(n_models):
        m, _ = random_class_model(seed.replicate(i), n_u=2, n_classes=3,
                                  per_class=2, n_w=3)
        joint = enumerate_joint(m)
        labels = minimal_discrete_control(joint)
        p_uz = joint.marginal(("u", "z"))
        cols = p_uz / p_uz.sum(axis=0)[None, :]
        p_zw = joint.marginal(("z", "w"))
        rows = p_zw / p_zw.sum(axis=1)[:, None]
        for t in np.unique(labels):
            zs = np.nonzero(labels == t)[0]
            if np.abs(cols[:, zs] - cols[:, zs[:1]]).max() >= 1e-10:
                failures.append(f"control model {i}: confounder law varies "
                                "inside a control class")
            if np.abs(rows[zs] - rows[zs[:1]]).max() >= 1e-10:
                failures.append(f"control model {i}: proxy law varies inside "
                                "a control class")
    print(f"minimal-control closure: {n_models} models checked")

    # bridge solutions against enumerable truth on separable models
    for i in range(n_models):
        m, labels, k0, _ = separable_class_model(seed.replicate(1000 + i),
                                                 n_u=2, n_classes=2, n_a=2)
        sol = solve_ls_bridge(enumerate_joint(m), labels)
        theta = sol.theta(np.array([-1.0, 1.0]))
        if abs(theta - (k0[1] - k0[0])) >= 1e-8:
            failures.append(f"bridge model {i}: contrast off by "
                            f"{theta - (k0[1] - k0[0]):.2e}")
    print(f"bridge recovery: {n_models} models checked")

    # moment identities on random full-support models
    checked = 0
    i = 0
    neg_probes: list[float] = []
    while checked < n_models:
        model = random_discrete_model(seed.replicate(2000 + i), n_u=2, n_z=4,
                                      n_w=2, n_a=4, n_y=3)
        i += 1
        try:
            system = build_system(enumerate_joint(model))
            ns = solve_nuisances(system)
        except IccError:
            continue
        pert = perturb_nuisances(system, ns, seed.replicate(3000 + i),
                                 scale=0.1)
        dec = verify_error_decomposition(system, ns, pert)
        if dec["gap"] >= 1e-10:
            failures.append(f"moment model {i}: decomposition gap "
                            f"{dec['gap']:.2e}")
        bnd = error_bound(system, ns, pert)
        if bnd["lhs"] > bnd["bound"] + 1e-12:
            failures.append(f"moment model {i}: error bound violated")
        for slot in ("k", "tau", "g", "q_k", "q_tau", "alpha_g"):
            d = check_neyman_orthogonality(system, ns, slot,
                                           seed.replicate(4000 + i))
            if abs(d) >= 1e-6:
                failures.append(f"moment model {i}: slot {slot} derivative "
                                f"{d:.2e}")
        neg_probes.append(abs(check_neyman_orthogonality(
            system, ns, "tau", seed.replicate(4000 + i),
            resolve_k=True, wrong_q_k=True)))
        checked += 1
    # the probe direction is random, so judge the negative control in
    # aggregate: a live probe has a clearly nonzero typical derivative
    if float(np.median(neg_probes)) <= 1e-5:
        failures.append("negative control inert across models")
    print(f"moment identities: {checked} models checked")

    if failures:
        for f in failures:
            print(f"FAIL {f}")
        print(f"{len(failures)} violations")
        return 3
    print(f"all checks passed ({n_models} models per family)")
    return 0


# ---------------------------------------------------------------- parser


def _add_source(sp, spec_only=False, data_only=False):
    if not data_only:
        sp.add_argument("--spec", help="builtin spec name (s1) or JSON file")
        sp.add_argument("--n", type=int, help="rows to simulate with --spec")
    if not spec_only:
        sp.add_argument("--data", help="CSV data file")
        sp.add_argument("--schema", help="JSON column-role map for --data")


def _add_common(sp, out=True):
    sp.add_argument("--seed", type=int, default=0)
    if out:
        sp.add_argument("--out", help="write a JSON report here")
    sp.add_argument("--workers", type=int, default=None,
                    help=f"process count (default ICC_WORKERS={default_workers()})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="icc",
        description="instrument-based causal estimation with proxied "
                    "confounders")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="draw a dataset from a linear spec")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", required=True, help="CSV output path")
    _add_common(sp, out=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("rank-test", help="test the control rank")
    _add_source(sp)
    sp.add_argument("--rank", type=int, required=True)
    sp.add_argument("--boot", type=int, default=500)
    sp.add_argument("--alpha", type=float, default=0.05)
    _add_common(sp)
    sp.set_defaults(func=cmd_rank_test)

    sp = sub.add_parser("relevance-test",
                        help="test instrument relevance given the control")
    _add_source(sp)
    sp.add_argument("--rank", type=int, required=True)
    sp.add_argument("--boot", type=int, default=500)
    sp.add_argument("--alpha", type=float, default=0.05)
    _add_common(sp)
    sp.set_defaults(func=cmd_relevance_test)

    sp = sub.add_parser("spec-test",
                        help="compare estimates under two nested controls")
    _add_source(sp)
    sp.add_argument("--rank", required=True, help="R1,R2 with R1 < R2")
    sp.add_argument("--boot", type=int, default=500)
    sp.add_argument("--alpha", type=float, default=0.05)
    _add_common(sp)
    sp.set_defaults(func=cmd_spec_test)

    sp = sub.add_parser("estimate", help="fit one or all estimators")
    _add_source(sp)
    sp.add_argument("--method", default="all", choices=list(METHODS) + ["all"])
    sp.add_argument("--rank", type=int, default=1)
    sp.add_argument("--boot", type=int, default=0,
                    help="bootstrap replicates for two-step standard errors")
    _add_common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("sweep", help="bias/sd of the estimator by control rank")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--n", type=int, default=4000)
    sp.add_argument("--reps", type=int, default=200)
    sp.add_argument("--rmax", type=int, required=True)
    sp.add_argument("--out", help="CSV output path (default stdout)")
    _add_common(sp, out=False)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("workflow", help="guided four-step analysis")
    _add_source(sp)
    sp.add_argument("--boot", type=int, default=500)
    sp.add_argument("--alpha", type=float, default=0.05)
    _add_common(sp)
    sp.set_defaults(func=cmd_workflow)

    sp = sub.add_parser("dml", help="cross-fitted debiased estimate on "
                                    "discrete data")
    _add_source(sp, data_only=True)
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--contrast", help="I,J treatment level codes")
    sp.add_argument("--t-rank", type=int, default=None, dest="t_rank")
    sp.add_argument("--k-dim", type=int, default=None, dest="k_dim")
    _add_common(sp)
    sp.set_defaults(func=cmd_dml, spec=None)

    sp = sub.add_parser("oracle-verify",
                        help="run the exact identity suite on random models")
    sp.add_argument("--models", type=int, default=50)
    _add_common(sp, out=False)
    sp.set_defaults(func=cmd_oracle_verify)

    sp = sub.add_parser("monotone",
                        help="rank-based control variable contrast")
    _add_source(sp)
    sp.add_argument("--contrast", required=True, help="A0,A1 treatment values")
    sp.add_argument("--cells", default="auto",
                    help="rank cell size target, or auto")
    sp.add_argument("--smoother", default="cells", choices=["cells", "kernel"])
    sp.add_argument("--rank", type=int, default=0,
                    help="carry a rank-r instrument index as extra control")
    sp.add_argument("--boot", type=int, default=200)
    _add_common(sp)
    sp.set_defaults(func=cmd_monotone)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except IccError as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
