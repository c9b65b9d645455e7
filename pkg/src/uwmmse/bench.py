"""Benchmark harness: the experiment grid at desk scale.

run_benchmark trains the unfolded network at every grid point, scores it
against the reference solver on a shared per-scenario test split, and writes
append-safe, schema-versioned CSV plus a JSON report. cdf_report dumps
empirical sum-rate distributions, generalization_eval scores a trained model
on a smaller scenario through zero padding, and timing_compare measures
single-threaded per-sample inference medians for both methods.
"""

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import FormatError, UwmmseError
from .network import IMPROVED, STANDARD, forward_pass, init_params
from .scenario import (SystemConfig, TEST, load_dataset, make_dataset,
                       sample_channel, save_dataset, zero_pad)
from .training import TrainConfig, evaluate, train
from .wmmse import run_wmmse, sum_rate

SCHEMA_VERSION = 1


@dataclass
class ExperimentSpec:
    """A grid of scenarios plus the shared data/solver/training settings.

    Grid axes are lists; every combination is one point. Datasets are keyed
    by (Nt, K, snr_db) only, so all layer counts and variants at a scenario
    share the same splits and their ratios stay comparable. `train` holds
    TrainConfig field overrides applied at every point (e.g. batch_size for
    a batch-size sweep).
    """

    Nt: list = field(default_factory=lambda: [8])
    K: list = field(default_factory=lambda: [2])
    snr_db: list = field(default_factory=lambda: [20.0])
    L: list = field(default_factory=lambda: [7])
    variants: list = field(default_factory=lambda: [IMPROVED])
    Nr: int = 2
    d: int = 2
    n_train: int = 600
    n_val: int = 100
    n_test: int = 100
    eps: float = 1e-4
    max_iters: int = 200
    restarts: int = 30
    train: dict = field(default_factory=dict)
    out_dir: str = "bench_out"
    data_dir: str = None
    seed: int = 0

    def validate(self) -> None:
        for nt, k in ((nt, k) for nt in self.Nt for k in self.K):
            for snr in self.snr_db:
                SystemConfig.from_snr(Nt=nt, Nr=self.Nr, d=self.d, K=k,
                                      snr_db=snr).validate()
        for l in self.L:
            if l < 1:
                raise ValueError(f"layer count must be >= 1, got {l}")
        for v in self.variants:
            if v not in (STANDARD, IMPROVED):
                raise ValueError(f"unknown variant {v!r}")
        TrainConfig(**self.train).validate()

    def grid(self):
        """Yield (config, L, variant) over all combinations, scenario-major."""
        for nt in self.Nt:
            for k in self.K:
                for snr in self.snr_db:
                    config = SystemConfig.from_snr(Nt=nt, Nr=self.Nr, d=self.d,
                                                   K=k, snr_db=snr)
                    for l in self.L:
                        for variant in self.variants:
                            yield config, l, variant

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as f:
            data = json.load(f)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise FormatError(f"unknown experiment fields {sorted(unknown)}")
        spec = cls(**data)
        spec.validate()
        return spec


def scenario_id(config: SystemConfig, L: int, variant: str) -> str:
    return f"Nt{config.Nt}_K{config.K}_snr{config.snr_db:g}_L{L}_{variant}"


@dataclass
class ResultRow:
    """One benchmark table row: quality plus wall-clock stats.

    net_infer_s and wmmse_infer_s are median per-sample inference seconds;
    the WMMSE timing is a single solve (restarts=1) at the row's eps/I_max,
    while wmmse_bits uses the configured restarts as the quality reference.
    """

    scenario: str
    Nt: int
    Nr: int
    d: int
    K: int
    snr_db: float
    L: int
    variant: str
    n_test: int
    data_seed: int
    net_bits: float
    wmmse_bits: float
    ratio: float
    train_minutes: float
    net_infer_s: float
    wmmse_infer_s: float

    CSV_HEADER = ("schema", "scenario", "Nt", "Nr", "d", "K", "snr_db", "L",
                  "variant", "n_test", "data_seed", "net_bits", "wmmse_bits",
                  "ratio", "train_minutes", "net_infer_s", "wmmse_infer_s")

    def csv_row(self) -> list:
        return [SCHEMA_VERSION, self.scenario, self.Nt, self.Nr, self.d,
                self.K, f"{self.snr_db:g}", self.L, self.variant, self.n_test,
                self.data_seed, f"{self.net_bits:.6f}",
                f"{self.wmmse_bits:.6f}", f"{self.ratio:.6f}",
                f"{self.train_minutes:.3f}", f"{self.net_infer_s:.6e}",
                f"{self.wmmse_infer_s:.6e}"]


def append_csv(path, header, rows) -> None:
    """Append rows, writing the header only on first creation.

    Appending to a file whose first line differs from `header` raises
    FormatError instead of silently mixing schemas.
    """
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    if exists:
        with open(path, newline="") as f:
            first = next(csv.reader(f), None)
        if first != list(header):
            raise FormatError(f"{path} has a different schema: {first}")
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if not exists:
            writer.writerow(header)
        writer.writerows(rows)


def dataset_seed(seed: int, config: SystemConfig) -> int:
    """Deterministic per-scenario dataset seed; independent of L/variant."""
    snr_centi_db = int(round(100 * config.snr_db))
    ss = np.random.SeedSequence([seed, config.Nt, config.K, snr_centi_db])
    return int(ss.generate_state(1)[0])


def _median_seconds(fn, samples) -> float:
    times = []
    for s in samples:
        t0 = time.perf_counter()
        fn(s)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _run_point(spec: ExperimentSpec, config: SystemConfig, L: int,
               variant: str, dataset, ds_seed: int, log) -> ResultRow:
    sid = scenario_id(config, L, variant)
    params0 = init_params(config, L=L, variant=variant, seed=spec.seed)
    train_cfg = TrainConfig(**{"seed": spec.seed, **spec.train})
    t0 = time.time()
    best, report = train(params0, dataset, train_cfg)
    train_minutes = (time.time() - t0) / 60.0
    log(f"  trained {sid}: best val {report.best_val_bits:.3f} bits at "
        f"iteration {report.best_iteration} ({report.iterations} run, "
        f"{report.stopped})")

    ev = evaluate(best, dataset, TEST, eps=spec.eps, max_iters=spec.max_iters,
                  restarts=spec.restarts, seed=spec.seed)
    timing_samples = [dataset.samples[i]
                      for i in dataset.indices(TEST)[:min(10, spec.n_test)]]
    net_s = _median_seconds(lambda s: forward_pass(best, s, config),
                            timing_samples)
    wmmse_s = _median_seconds(
        lambda s: run_wmmse(s, config, eps=spec.eps, max_iters=spec.max_iters),
        timing_samples)

    return ResultRow(scenario=sid, Nt=config.Nt, Nr=config.Nr, d=config.d,
                     K=config.K, snr_db=float(config.snr_db), L=L,
                     variant=variant,
                     n_test=spec.n_test, data_seed=ds_seed,
                     net_bits=ev.mean_net, wmmse_bits=ev.mean_wmmse,
                     ratio=ev.ratio, train_minutes=train_minutes,
                     net_infer_s=net_s, wmmse_infer_s=wmmse_s)


def run_benchmark(spec: ExperimentSpec, log=print) -> list:
    """Run every grid point; failures are logged and skipped, not fatal.

    Writes out_dir/results.csv (append-safe) and out_dir/bench.json
    (rewritten each run), and returns the ResultRows.
    """
    spec.validate()
    os.makedirs(spec.out_dir, exist_ok=True)
    if spec.data_dir:
        os.makedirs(spec.data_dir, exist_ok=True)

    rows, skipped, datasets = [], [], {}
    for config, L, variant in spec.grid():
        sid = scenario_id(config, L, variant)
        key = (config.Nt, config.K, f"{config.snr_db:g}")
        ds_seed = dataset_seed(spec.seed, config)
        try:
            if key not in datasets:
                datasets[key] = _scenario_dataset(spec, config, ds_seed, log)
            row = _run_point(spec, config, L, variant, datasets[key],
                             ds_seed, log)
        except UwmmseError as e:
            log(f"[skip] {sid}: {type(e).__name__}: {e}")
            skipped.append({"scenario": sid, "error": f"{type(e).__name__}: {e}"})
            continue
        rows.append(row)
        append_csv(os.path.join(spec.out_dir, "results.csv"),
                   ResultRow.CSV_HEADER, [row.csv_row()])
        log(f"  {sid}: ratio {row.ratio:.4f} "
            f"({row.net_bits:.3f} / {row.wmmse_bits:.3f} bits)")

    report = {"schema_version": SCHEMA_VERSION, "spec": asdict(spec),
              "rows": [asdict(r) for r in rows], "skipped": skipped}
    with open(os.path.join(spec.out_dir, "bench.json"), "w") as f:
        json.dump(report, f, indent=2)
    return rows


def _scenario_dataset(spec: ExperimentSpec, config: SystemConfig,
                      ds_seed: int, log):
    name = f"ds_Nt{config.Nt}_K{config.K}_snr{config.snr_db:g}.bin"
    path = os.path.join(spec.data_dir, name) if spec.data_dir else None
    if path and os.path.exists(path):
        dataset = load_dataset(path)
        log(f"  loaded {path}")
        return dataset
    dataset = make_dataset(config, spec.n_train, spec.n_val, spec.n_test,
                           seed=ds_seed)
    if path:
        save_dataset(path, dataset)
        log(f"  wrote {path}")
    return dataset


# --- distribution, transfer, timing -------------------------------------------

def empirical_cdf(values) -> list:
    """Sorted (value, quantile) pairs with quantile i/n ending at 1.0."""
    if len(values) == 0:
        raise ValueError("empty sample list")
    ordered = np.sort(np.asarray(values, dtype=float))
    n = len(ordered)
    return [(float(v), (i + 1) / n) for i, v in enumerate(ordered)]


def cdf_report(rates: dict, path) -> None:
    """Write per-method empirical CDFs of sum rates to one CSV.

    rates maps a method name (e.g. "wmmse", "net") to its per-sample bits.
    """
    header = ("schema", "method", "rate_bits", "quantile")
    rows = []
    for method, values in rates.items():
        for v, q in empirical_cdf(values):
            rows.append([SCHEMA_VERSION, method, f"{v:.6f}", f"{q:.6f}"])
    append_csv(path, header, rows)


def generalization_eval(params, model_config: SystemConfig,
                        small_config: SystemConfig, samples, *,
                        eps: float = 1e-4, max_iters: int = 200,
                        restarts: int = 1, seed: int = 0) -> ResultRow:
    """Score a trained model on a smaller scenario through zero padding.

    Each small-scenario channel is zero-padded into the model's shape, the
    model's precoder restricted to the retained users and antennas is scored
    on the small scenario (padded antenna rows see all-zero channel columns,
    so dropping them only forfeits the power they burned), and WMMSE runs
    natively at the small config on the same samples.
    """
    net_bits, wmmse_bits = [], []
    for s in samples:
        padded = zero_pad(s, model_config, small_config)
        v = forward_pass(params, padded, model_config).layers[-1].V
        net_bits.append(sum_rate(v[:small_config.K, :small_config.Nt], s,
                                 small_config))
        state, _ = run_wmmse(s, small_config, eps=eps, max_iters=max_iters,
                             restarts=restarts, seed=seed)
        wmmse_bits.append(sum_rate(state.V, s, small_config))

    timing = samples[:min(10, len(samples))]
    net_s = _median_seconds(
        lambda s: forward_pass(params, zero_pad(s, model_config, small_config),
                               model_config), timing)
    wmmse_s = _median_seconds(
        lambda s: run_wmmse(s, small_config, eps=eps, max_iters=max_iters),
        timing)

    sid = (f"transfer_Nt{model_config.Nt}_K{model_config.K}"
           f"_to_Nt{small_config.Nt}_K{small_config.K}")
    return ResultRow(scenario=sid, Nt=small_config.Nt, Nr=small_config.Nr,
                     d=small_config.d, K=small_config.K,
                     snr_db=float(small_config.snr_db),
                     L=params.L, variant=params.variant,
                     n_test=len(samples), data_seed=seed,
                     net_bits=float(np.mean(net_bits)),
                     wmmse_bits=float(np.mean(wmmse_bits)),
                     ratio=float(np.mean(net_bits) / np.mean(wmmse_bits)),
                     train_minutes=0.0, net_infer_s=net_s,
                     wmmse_infer_s=wmmse_s)


@dataclass
class TimingStats:
    """Single-threaded per-sample inference medians and their ratio."""

    net_seconds: float
    wmmse_seconds: float
    speedup: float
    repetitions: int
    wmmse_iterations: float
    L: int
    variant: str

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, **asdict(self)},
                          indent=2)


def timing_compare(params, config: SystemConfig, samples=None, *,
                   eps: float = 1e-4, max_iters: int = 200,
                   repetitions: int = 12, seed: int = 0) -> TimingStats:
    """Median per-sample wall time, single-threaded, for network vs solver.

    Times one warmed-up pass per method on `repetitions` distinct samples
    (fresh draws when none are given) with BLAS pinned to one thread, so the
    comparison is core-for-core and hardware-independent in ratio.
    """
    if repetitions < 10:
        raise ValueError("need at least 10 repetitions for a stable median")
    if samples is None:
        samples = [sample_channel(config, seed + j) for j in range(repetitions)]
    samples = samples[:repetitions]
    if len(samples) < repetitions:
        raise ValueError(f"got {len(samples)} samples, need {repetitions}")

    with threadpool_limits(limits=1):
        forward_pass(params, samples[0], config)
        run_wmmse(samples[0], config, eps=eps, max_iters=max_iters)

        net_t, wmmse_t, iters = [], [], []
        for s in samples:
            t0 = time.perf_counter()
            forward_pass(params, s, config)
            net_t.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            _, rep = run_wmmse(s, config, eps=eps, max_iters=max_iters)
            wmmse_t.append(time.perf_counter() - t0)
            iters.append(rep.iterations)

    net_med, wmmse_med = float(np.median(net_t)), float(np.median(wmmse_t))
    return TimingStats(net_seconds=net_med, wmmse_seconds=wmmse_med,
                       speedup=wmmse_med / net_med, repetitions=repetitions,
                       wmmse_iterations=float(np.median(iters)),
                       L=params.L, variant=params.variant)
