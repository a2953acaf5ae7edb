"""``hiergp`` command-line front end.

Subcommands are pipeline stages connected by files::

    hiergp generate --config run.json
    hiergp fit      --config run.json [--allow-nonconverged]
    hiergp predict  --config run.json
    hiergp evaluate --config run.json
    hiergp transfer --config run.json

Exit codes: 0 success, 2 config or usage error, 3 numerical failure,
4 convergence failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from hiergp import eval as ev
from hiergp.config import dump_config, load_config
from hiergp.datagen import load_dataset, make_population, save_dataset
from hiergp.errors import (ConfigError, DomainError, HierGPError, InitializationError,
                           NumericalError, ParseError)
from hiergp.inference import diagnose, load_draws, sample, save_draws
from hiergp.inference.nuts import PosteriorDraws, SamplerConfig
from hiergp.model.targets import MTLATarget, MTLBTarget, STLTarget

log = logging.getLogger("hiergp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CONVERGENCE = 0, 2, 3, 4
RHAT_THRESHOLD = 1.05


class ConvergenceFailure(HierGPError):
    pass


def _fmt(v):
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load_population(cfg):
    return load_dataset(cfg.io.resolve(cfg.io.dataset))


def _fit_task_ids(cfg, n_tasks):
    if cfg.model.task_ids is not None:
        ids = list(cfg.model.task_ids)
    else:
        ids = [k for k in range(n_tasks) if k not in set(cfg.eval.holdout_ids)]
    bad = [k for k in ids if not 0 <= k < n_tasks]
    if bad or not ids:
        raise ConfigError(f"task ids {bad or ids} do not match a dataset of {n_tasks} tasks")
    return ids


def _child_seed(seed, *keys):
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, np.uint64)[0])


def _merge(parts):
    """Concatenate independently sampled draws along the parameter axis."""
    first = parts[0]
    return PosteriorDraws(
        [n for p in parts for n in p.names],
        np.concatenate([p.draws for p in parts], axis=2),
        np.any([p.divergence_flags for p in parts], axis=0),
        np.mean([p.step_size for p in parts], axis=0),
        meta=dict(first.meta))


def cmd_generate(cfg):
    pop = make_population(cfg.plate, cfg.eval.n_train, cfg.eval.split_seed)
    path = save_dataset(pop, cfg.io.resolve(cfg.io.dataset))
    n = sum(len(t) for t in pop.tasks)
    rec = pop.normalisation
    print(f"generated {len(pop.tasks)} tasks, {n} points "
          f"({pop.tasks[0].n_train} train per task); input_scale={rec.input_scale:g} "
          f"output_mean={rec.output_mean:.6g} output_std={rec.output_std:.6g} -> {path}")
    return EXIT_OK


def cmd_fit(cfg, allow_nonconverged=False):
    pop = _load_population(cfg)
    ids = _fit_task_ids(cfg, len(pop.tasks))
    tasks = [pop.tasks[k] for k in ids]
    regime = cfg.model.regime
    priors = cfg.model.priors
    sc = cfg.sampler
    if regime == "STL":
        parts = []
        for k, t in zip(ids, tasks):
            c = SamplerConfig(sc.chains, sc.warmup_iters, sc.sampling_iters, sc.target_accept,
                              sc.max_tree_depth, _child_seed(sc.seed, k))
            parts.append(sample(STLTarget(t, priors, task_id=k), config=c))
        draws = _merge(parts)
    elif regime == "MTL_A":
        draws = sample(MTLATarget(tasks, priors, ids), config=sc)
    else:
        seps = [t.separation for t in tasks]
        draws = sample(MTLBTarget(tasks, seps, priors, ids), config=sc)
    draws.meta = {"regime": regime, "task_ids": ids,
                  "separations": [float(t.separation) for t in tasks],
                  "split_fingerprint": ev.split_fingerprint(pop.tasks),
                  "sampler": {"chains": sc.chains, "warmup_iters": sc.warmup_iters,
                              "sampling_iters": sc.sampling_iters, "seed": sc.seed}}
    diag = diagnose(draws)
    path = save_draws(draws, cfg.draws_path(), diag)
    print(f"fit {regime} on {len(ids)} task(s): {draws.n_draws} draws, "
          f"max R-hat {diag.max_rhat:.4f}, min bulk ESS {diag.min_ess:.1f}, "
          f"{diag.divergence_count} divergences -> {path}")
    if not diag.converged(RHAT_THRESHOLD):
        msg = f"R-hat {diag.max_rhat:.4f} exceeds {RHAT_THRESHOLD}"
        if not allow_nonconverged:
            raise ConvergenceFailure(msg)
        log.warning("%s (continuing: --allow-nonconverged)", msg)
    return EXIT_OK


def _check_fit(draws, pop):
    fp = draws.meta.get("split_fingerprint")
    if fp is not None and fp != ev.split_fingerprint(pop.tasks):
        raise ConfigError("draws were fitted on a different dataset split")
    ids = draws.meta.get("task_ids")
    if ids is None or max(ids) >= len(pop.tasks):
        raise ConfigError("draws do not match the dataset's tasks")
    return ids


def cmd_predict(cfg):
    pop = _load_population(cfg)
    draws = load_draws(cfg.draws_path())
    ids = _check_fit(draws, pop)
    regime = draws.meta["regime"]
    on_train = cfg.eval.predict_split == "train"
    rows = []
    for k in ids:
        t = pop.tasks[k]
        params = ev.task_parameter_draws(draws, k, t.n_train, regime, cfg.eval.max_draws)
        x = t.train_inputs if on_train else t.test_inputs
        y = t.train_outputs if on_train else t.test_outputs
        logp, mu, var = ev.pointwise_log_densities(t, params, x, y)
        _, per_point = ev.mixture_log_likelihood(logp)
        m = mu.mean(axis=0)
        v = (var + mu ** 2).mean(axis=0) - m ** 2
        for i in range(y.shape[0]):
            rows.append([k, t.label, i, _fmt(x[i, 0]), _fmt(x[i, 1]), _fmt(y[i]),
                         _fmt(m[i]), _fmt(v[i]), _fmt(per_point[i])])
    path = cfg.io.resolve(cfg.io.predictions)
    _write_csv(path, ["task", "pair_id", "point", "x1", "x2", "y", "mean", "var", "lpy"], rows)
    print(f"predicted {len(rows)} points over {len(ids)} task(s) -> {path}")
    return EXIT_OK


def cmd_evaluate(cfg):
    pop = _load_population(cfg)
    fits = {}
    for tag, p in sorted((cfg.io.compare or {}).items()):
        fits[tag] = load_draws(cfg.io.resolve(p))
    if not fits:
        d = load_draws(cfg.draws_path())
        fits[d.meta.get("regime", cfg.model.regime)] = d
    for d in fits.values():
        _check_fit(d, pop)
    try:
        report = ev.compare_methods(pop, fits, max_draws=cfg.eval.max_draws)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    tags = list(fits)
    rows = [[k, pop.tasks[k].label, _fmt(pop.tasks[k].separation)]
            + [_fmt(report["per_task"][t][i]) for t in tags]
            for i, k in enumerate(report["tasks"])]
    rows.append(["total", "", ""] + [_fmt(report["total"][t]) for t in tags])
    path = cfg.io.resolve(cfg.io.report)
    _write_csv(path, ["task", "pair_id", "separation"] + tags, rows)
    print("total lpY: " + ", ".join(f"{t} {report['total'][t]:.3f}" for t in tags)
          + f" -> {path}")
    return EXIT_OK


def cmd_transfer(cfg):
    pop = _load_population(cfg)
    if not cfg.eval.holdout_ids:
        raise ConfigError("transfer needs eval.holdout_ids")
    fits = {}
    for m in cfg.eval.methods:
        if m == "STL":
            continue
        paths = cfg.io.transfer_fits or {}
        if m not in paths:
            raise ConfigError(f"io.transfer_fits has no fit for method {m}")
        d = load_draws(cfg.io.resolve(paths[m]))
        ids = _check_fit(d, pop)
        leaked = set(ids) & set(cfg.eval.holdout_ids)
        if leaked:
            raise ConfigError(f"{m} fit was trained on hold-out task(s) {sorted(leaked)}")
        fits[m] = d
    try:
        curves = ev.transfer_experiment(
            pop, list(cfg.eval.holdout_ids), list(cfg.eval.budgets), cfg.eval.repeats,
            list(cfg.eval.methods), fits, cfg.sampler, cfg.model.priors,
            seed=cfg.sampler.seed, max_draws=cfg.eval.max_draws, max_test=cfg.eval.max_test)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    rows = [[r["method"], r["budget"], r["repeat"], _fmt(r["lpy"]), r["task"]]
            for c in curves for r in c.rows]
    path = cfg.io.resolve(cfg.io.transfer)
    _write_csv(path, ["method", "budget", "repeat", "lpy", "task"], rows)
    for c in curves:
        print(f"{c.method_tag} task {c.task_id}: "
              + ", ".join(f"N={n} {v:.3f}" for n, v in zip(c.budgets, c.mean_lpy)))
    print(f"-> {path}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "transfer": cmd_transfer}


def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="hiergp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=_u64, help="override plate and sampler seeds")
    p.add_argument("--out", help="output directory (overrides io.out_dir)")
    p.add_argument("--allow-nonconverged", action="store_true",
                   help="exit 0 from fit even if R-hat exceeds 1.05")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s",
                        stream=sys.stderr)
    logging.getLogger("hiergp").setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.out)
        dump_config(cfg, cfg.io.resolve(f"{args.command}.effective_config.json"))
        fn = COMMANDS[args.command]
        if args.command == "fit":
            return fn(cfg, args.allow_nonconverged)
        return fn(cfg)
    except ConvergenceFailure as exc:
        print(f"error: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (NumericalError, InitializationError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ParseError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
