"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation. Every stochastic subcommand needs an explicit ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import audit_bounds, hoeffding_class, hoeffding_single, kl_discrete, mcallester_bound
from .dataset import DatasetSchema, load_csv, perturb_sensitive, save_csv, synth_biased
from .ensemble import TRAINERS, build_profile, load_ensemble, save_ensemble, train_ensemble
from .errors import DataError, FairPruneError, InvalidInput, InvariantViolation, NoUsefulWeakLearner
from .harness import ExperimentConfig, check_report, friedman_avg_rank, run_experiment, write_report
from .pruning import ALGORITHMS, MemberPool, PruneConfig, prune

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _dump(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _load_data(args):
    return load_csv(args.data, DatasetSchema.load(args.schema))


def cmd_synth(args):
    d = synth_biased(args.n, args.bias, args.d_g, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    schema = save_csv(d, out)
    doc = schema.to_dict()
    doc["tool_version"] = __version__
    doc["config"] = _resolved(args)
    doc["rows"] = d.n
    _dump(out.with_suffix(".schema.json"), doc)


def cmd_train(args):
    d = _load_data(args)
    e = train_ensemble(d, args.trainer, args.m, args.depth, args.seed)
    e.meta["config"] = _resolved(args)
    e.meta["data_fingerprint"] = d.fingerprint()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_ensemble(e, args.out)


def _profile(args):
    d = _load_data(args)
    e = load_ensemble(args.model)
    prof = build_profile(e, d, perturb_sensitive(d, args.seed))
    return d, e, prof


def cmd_prune(args):
    d, e, prof = _profile(args)
    cfg = PruneConfig(k=args.k, lam=args.lam, n_m=args.n_m, seed=args.seed, iterations_multiplier=args.iterations_multiplier)
    res = prune(MemberPool(prof, d.labels), args.algo, cfg)
    doc = res.to_dict()
    doc.update(tool_version=__version__, config=_resolved(args), data_fingerprint=d.fingerprint(), ensemble_size=e.m)
    _dump(args.out, doc)


def cmd_audit(args):
    d, e, prof = _profile(args)
    rep = audit_bounds(e, prof)
    if not np.isclose(rep.first_order, 2 * rep.expected_member_dr, rtol=0, atol=1e-15):
        raise InvariantViolation("first-order bound is not twice the expected member DR")
    uniform = np.full(e.m, 1.0 / e.m)
    kl = kl_discrete(e.weights, uniform)
    dr = rep.ensemble_dr
    pac = {
        "single": {"slack": hoeffding_single(d.n, args.delta)},
        "finite_class": {"slack": hoeffding_class(d.n, args.delta, e.m), "class_size": e.m},
        "mcallester": {"slack": mcallester_bound(d.n, args.delta, kl), "kl_to_uniform": kl},
    }
    for v in pac.values():
        v["bound"] = dr + v["slack"]
    doc = {
        "tool_version": __version__,
        "config": _resolved(args),
        "data_fingerprint": d.fingerprint(),
        "oracle": rep.to_dict(),
        "pac": pac,
        "delta": args.delta,
    }
    _dump(args.out, doc)


def cmd_run(args):
    cfg_path = Path(args.config)
    try:
        raw = json.loads(cfg_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"config file not found: {cfg_path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {cfg_path} is not valid JSON: {exc}") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    if "seed" not in raw:
        raise UsageError("run: a seed is required (set 'seed' in the config or pass --seed)")
    out = args.out or raw.get("output_dir")
    if not out:
        raise UsageError("run: an output directory is required (--out or 'output_dir' in the config)")
    raw["output_dir"] = str(out)
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise DataError(f"malformed config {cfg_path}: {exc}") from None
    rep = run_experiment(cfg, threads=args.threads, base_dir=cfg_path.parent)
    check_report(rep)
    write_report(rep, out)


def cmd_ranks(args):
    path = Path(args.scores)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except FileNotFoundError:
        raise DataError(f"scores file not found: {path}") from None
    if len(rows) < 3:
        raise DataError(f"{path}: need a header and at least two method rows")
    header, body = rows[0], rows[1:]
    try:
        scores = np.array([[float(v) for v in r[1:]] for r in body])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    ranks = friedman_avg_rank(scores, lower_is_better=not args.higher_is_better)
    _dump(
        args.out,
        {
            "tool_version": __version__,
            "config": _resolved(args),
            "datasets": header[1:],
            "ranks": {r[0]: float(v) for r, v in zip(body, ranks)},
        },
    )


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairprune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fairprune {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a biased synthetic dataset (CSV + schema sidecar)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--bias", type=float, required=True)
    s.add_argument("--d-g", type=int, default=5)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="CSV path; the schema goes next to it as <stem>.schema.json")
    s.set_defaults(func=cmd_synth)

    def data_args(q):
        q.add_argument("--data", required=True)
        q.add_argument("--schema", required=True)

    t = sub.add_parser("train", help="train an ensemble and save it as JSON")
    data_args(t)
    t.add_argument("--trainer", choices=TRAINERS, default="bagging")
    t.add_argument("--m", type=int, default=11)
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("prune", help="prune a saved ensemble; writes the selection as JSON")
    q.add_argument("--model", required=True)
    data_args(q)
    q.add_argument("--algo", choices=ALGORITHMS, required=True)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--lambda", dest="lam", type=float, default=0.5)
    q.add_argument("--n-m", type=int, default=2)
    q.add_argument("--iterations-multiplier", type=int, default=1)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_prune)

    a = sub.add_parser("audit-bounds", help="evaluate oracle and PAC bounds for a saved ensemble")
    a.add_argument("--model", required=True)
    data_args(a)
    a.add_argument("--delta", type=float, default=0.05)
    a.add_argument("--seed", type=int, required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_audit)

    r = sub.add_parser("run", help="run a cross-validated experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("ranks", help="Friedman average ranks from a methods x datasets CSV")
    k.add_argument("--scores", required=True)
    k.add_argument("--higher-is-better", action="store_true")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_ranks)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_usage())
        args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (InvariantViolation, AssertionError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataError, InvalidInput, NoUsefulWeakLearner) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FairPruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
