"""Command-line harness around the solver, the network, and the benchmarks.

Verbs: gen-data, train, eval, bench, cdf, transfer, time, gradcheck. Each
prints a short human-readable summary; table-like output goes to CSV and
reports to JSON, under --out where applicable.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .bench import (ExperimentSpec, SCHEMA_VERSION, cdf_report,
                    generalization_eval, run_benchmark, timing_compare)
from .gradients import backward_pass, fd_model_gradient
from .network import (IMPROVED, STANDARD, forward_pass, init_params,
                      load_model, save_model)
from .scenario import (SystemConfig, config_to_json, load_config,
                       load_dataset, make_dataset, sample_channel,
                       save_dataset)
from .training import TrainConfig, evaluate, train


def _add_shape_flags(p, nt=8, k=2, snr=20.0):
    p.add_argument("--config", help="SystemConfig JSON path (overrides shape flags)")
    p.add_argument("--nt", type=int, default=nt)
    p.add_argument("--nr", type=int, default=2)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--k", type=int, default=k)
    p.add_argument("--snr-db", type=float, default=snr)


def _system_config(args) -> SystemConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return SystemConfig.from_snr(Nt=args.nt, Nr=args.nr, d=args.d, K=args.k,
                                 snr_db=args.snr_db)


def _add_train_flags(p):
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--alpha", type=float, default=TrainConfig.alpha)
    p.add_argument("--lr-scale", type=float, default=TrainConfig.lr_scale)
    p.add_argument("--max-iters", type=int, default=TrainConfig.max_iters)
    p.add_argument("--val-every", type=int, default=TrainConfig.val_every)
    p.add_argument("--patience", type=int, default=TrainConfig.patience)


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, alpha=args.alpha,
                       lr_scale=args.lr_scale, max_iters=args.max_iters,
                       val_every=args.val_every, patience=args.patience,
                       seed=args.seed)


def cmd_gen_data(args) -> int:
    config = _system_config(args)
    dataset = make_dataset(config, args.train, args.val, args.test,
                           seed=args.seed)
    save_dataset(args.out, dataset)
    print(f"wrote {args.out}: Nt={config.Nt} Nr={config.Nr} d={config.d} "
          f"K={config.K} P_T={config.P_T:g}, "
          f"{args.train}/{args.val}/{args.test} train/val/test, seed {args.seed}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    config = dataset.config
    params = init_params(config, L=args.layers, variant=args.variant,
                         seed=args.seed, noise=args.init_noise)
    best, report = train(params, dataset, _train_config(args))
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.bin")
    save_model(model_path, best, config)
    with open(os.path.join(args.out, "train_report.json"), "w") as f:
        f.write(report.to_json())
    print(f"trained {args.variant} L={args.layers} on {args.data}: "
          f"best val {report.best_val_bits:.3f} bits at iteration "
          f"{report.best_iteration} ({report.iterations} run, {report.stopped}); "
          f"model -> {model_path}")
    return 0


def cmd_eval(args) -> int:
    params, config = load_model(args.model)
    dataset = load_dataset(args.data)
    if config_to_json(dataset.config) != config_to_json(config):
        print(f"error: dataset config {dataset.config} does not match "
              f"model config {config}", file=sys.stderr)
        return 2
    ev = evaluate(params, dataset, restarts=args.restarts, seed=args.seed,
                  csi_error_var=args.csi_var)
    print(f"test ratio {ev.ratio:.4f} (net {ev.mean_net:.3f} / "
          f"wmmse {ev.mean_wmmse:.3f} bits, {len(ev.net_bits)} samples, "
          f"restarts {args.restarts}, csi var {args.csi_var:g})")
    if args.out:
        with open(args.out, "w") as f:
            f.write(ev.to_json())
        print(f"report -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    if args.config:
        spec = ExperimentSpec.load(args.config)
    else:
        spec = ExperimentSpec()
    if args.out:
        spec.out_dir = args.out
    if args.seed is not None:
        spec.seed = args.seed
    rows = run_benchmark(spec)
    print(f"{len(rows)} rows -> {os.path.join(spec.out_dir, 'results.csv')}")
    return 0 if rows else 1


def cmd_cdf(args) -> int:
    params, config = load_model(args.model)
    dataset = load_dataset(args.data)
    if config_to_json(dataset.config) != config_to_json(config):
        print("error: dataset/model config mismatch", file=sys.stderr)
        return 2
    ev = evaluate(params, dataset, restarts=args.restarts, seed=args.seed,
                  csi_error_var=args.csi_var)
    cdf_report({"wmmse": ev.wmmse_bits, "net": ev.net_bits}, args.out)
    print(f"CDF over {len(ev.net_bits)} samples -> {args.out} "
          f"(ratio {ev.ratio:.4f})")
    return 0


def cmd_transfer(args) -> int:
    params, model_config = load_model(args.model)
    small = SystemConfig.from_snr(
        Nt=args.nt or model_config.Nt, Nr=args.nr or model_config.Nr,
        d=args.d or model_config.d, K=args.k,
        snr_db=args.snr_db if args.snr_db is not None
        else float(model_config.snr_db))
    samples = [sample_channel(small, args.seed + j)
               for j in range(args.samples)]
    row = generalization_eval(params, model_config, small, samples,
                              restarts=args.restarts, seed=args.seed)
    print(f"{row.scenario}: ratio {row.ratio:.4f} "
          f"(net {row.net_bits:.3f} / wmmse {row.wmmse_bits:.3f} bits, "
          f"{row.n_test} samples)")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"schema_version": SCHEMA_VERSION, **asdict(row)}, f,
                      indent=2)
        print(f"report -> {args.out}")
    return 0


def cmd_time(args) -> int:
    config = _system_config(args)
    params = init_params(config, L=args.layers, variant=args.variant,
                         seed=args.seed)
    stats = timing_compare(params, config, eps=args.eps,
                           max_iters=args.max_iters,
                           repetitions=args.repetitions, seed=args.seed)
    print(f"net {1e3 * stats.net_seconds:.2f} ms/sample vs wmmse "
          f"{1e3 * stats.wmmse_seconds:.2f} ms/sample "
          f"(median of {stats.repetitions}, single-threaded, wmmse "
          f"{stats.wmmse_iterations:.0f} iters): speedup {stats.speedup:.2f}x")
    if args.out:
        with open(args.out, "w") as f:
            f.write(stats.to_json())
        print(f"report -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    config = _system_config(args)
    failures = 0
    for j in range(args.instances):
        sample = sample_channel(config, args.seed + j)
        params = init_params(config, L=args.layers, variant=args.variant,
                             seed=args.seed + j)
        trace = forward_pass(params, sample, config)
        bundle = backward_pass(trace, params, sample, config)
        g_a = np.concatenate([np.ravel(arr) for lp in bundle.param_grads
                              for _, arr in lp.blocks()])

        def rel_at(h):
            fd = fd_model_gradient(params, sample, config, h=h)
            g_f = np.concatenate([np.ravel(arr) for lp in fd.layers
                                  for _, arr in lp.blocks()])
            return np.linalg.norm(g_a - g_f) / max(np.linalg.norm(g_a),
                                                   np.linalg.norm(g_f))

        rel = rel_at(None)
        if rel > args.tol:
            # central-difference error is truncation-limited near the
            # diagonal-reciprocal poles and roundoff-limited on near-zero
            # gradients; no single step serves both, so retry across decades
            rel = min([rel] + [rel_at(h) for h in (1e-8, 1e-4)])
        ok = rel <= args.tol
        failures += not ok
        print(f"instance {j}: rel {rel:.3e} {'PASS' if ok else 'FAIL'}")
    print(f"{args.instances - failures}/{args.instances} within {args.tol:g}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="uwmmse",
        description="Unfolded WMMSE precoding: data, training, benchmarks.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="generate and save a dataset")
    _add_shape_flags(p)
    p.add_argument("--train", type=int, default=600)
    p.add_argument("--val", type=int, default=100)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset.bin")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a saved dataset")
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--layers", type=int, default=7)
    p.add_argument("--variant", choices=(STANDARD, IMPROVED), default=IMPROVED)
    p.add_argument("--init-noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="train_out")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a trained model against the solver")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--restarts", type=int, default=30)
    p.add_argument("--csi-var", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write an eval report JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="run the experiment grid")
    p.add_argument("--config", help="ExperimentSpec JSON path")
    p.add_argument("--out", help="output directory (overrides spec)")
    p.add_argument("--seed", type=int, help="rng seed (overrides spec)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("cdf", help="dump per-sample sum-rate CDFs to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--csi-var", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="cdf.csv")
    p.set_defaults(fn=cmd_cdf)

    p = sub.add_parser("transfer",
                       help="evaluate a model on a smaller scenario")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, required=True, help="smaller user count")
    p.add_argument("--nt", type=int, help="defaults to the model's Nt")
    p.add_argument("--nr", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--snr-db", type=float)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--restarts", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write a JSON report here")
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("time", help="single-threaded inference timing")
    _add_shape_flags(p, nt=32, k=8)
    p.add_argument("--layers", type=int, default=7)
    p.add_argument("--variant", choices=(STANDARD, IMPROVED), default=IMPROVED)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--repetitions", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write a JSON report here")
    p.set_defaults(fn=cmd_time)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the backward pass")
    _add_shape_flags(p, nt=4, k=2, snr=10.0)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--variant", choices=(STANDARD, IMPROVED), default=STANDARD)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
