"""Experiment orchestration: dataset generation, reference runs, sweeps, plots.

Pipeline (all artifacts live in one output directory):

  simulate   trajectory.csv + manifest.json (dataset hash recorded)
  reference  reference.npz (weighted pre-resampling ensembles per step,
             plus the kernel bandwidths derived from the reference alone)
  sweep      records.csv (one row per scheme x N x repetition x step)
  report     report/*.svg log-log curves + report/slopes.txt

A run is fully determined by (config, seed): observations are generated
once and shared by every method, per-cell generators are derived from the
run seed by the named splitmix64 fold recorded in the manifest, and every
output byte except the wall-time column is reproducible.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import diagnostics
from .diagnostics import RUN_RECORD_HEADER, KernelSpec, RunRecord
from .errors import ConfigError, IOFailure, MalformedCSV, MixEnkfError
from .filters import SchemeSpec, WeightedEnsemble, filter_step, initial_ensemble
from .models import Trajectory, build_benchmark, test_integrand
from .qmc import QmcScheme, tqmc_filter_step, tqmc_sample
from .gauss import GaussianMixture
from .seeding import SEED_MIX_NAME, derive_seed, rng_from

CONFIG_VERSION = 1

FULL_SCALE_REFERENCE_N = {"lorenz96": 2**12}
FULL_SCALE_REFERENCE_N_DEFAULT = 2**13


@dataclass
class ExperimentConfig:
    """Validated sweep configuration (see README for the file schema)."""

    model: str
    observation: str
    horizon: int
    particle_grid: list[int]
    repetitions: int
    seed: int
    schemes: list[str]
    reference_scheme: str = "QMC-MM_c"
    reference_n: int = 2**11
    config_version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version {self.config_version}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not self.particle_grid:
            raise ConfigError("particle_grid must be nonempty")
        for n in self.particle_grid:
            if n < 4:
                raise ConfigError("all particle counts must be >= 4")
            if n & (n - 1):
                raise ConfigError("particle counts must be powers of two")
        if self.reference_n < max(self.particle_grid):
            raise ConfigError("reference_n must be >= the largest grid size")
        if self.model == "lorenz96" and self.observation == "arctan":
            if min(self.particle_grid) < 64:
                raise ConfigError(
                    "the 40-dimensional model with the arctan map needs N >= 64 "
                    "(ensemble must exceed the state dimension)"
                )
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.schemes:
            raise ConfigError("schemes must be nonempty")
        for name in self.schemes:
            parse_scheme(name)
        parse_scheme(self.reference_scheme)

    @classmethod
    def load(cls, path: Path, seed_override: int | None = None,
             full_scale: bool = False) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise IOFailure(f"cannot read config {path}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must be a key-value mapping")
        known = {
            "config_version", "model", "observation", "horizon",
            "particle_grid", "repetitions", "seed", "schemes",
            "reference_scheme", "reference_n",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if seed_override is not None:
            raw["seed"] = seed_override
        cfg = cls(**raw)
        if full_scale:
            cfg.reference_n = FULL_SCALE_REFERENCE_N.get(
                cfg.model, FULL_SCALE_REFERENCE_N_DEFAULT
            )
        return cfg


def parse_scheme(name: str) -> SchemeSpec | QmcScheme:
    """Parse either a Monte Carlo scheme label or a QMC scheme label."""
    if name.strip().upper().startswith("QMC"):
        return QmcScheme.parse(name)
    return SchemeSpec.parse(name)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> Path:
    """Generate the shared dataset and its manifest."""
    out.mkdir(parents=True, exist_ok=True)
    model = build_benchmark(cfg.model, cfg.observation)
    rng = rng_from(cfg.seed, "dataset")
    from .models import simulate_truth

    traj = simulate_truth(model, cfg.horizon, rng)
    traj_path = out / "trajectory.csv"
    try:
        traj_path.write_text(traj.to_csv())
    except OSError as exc:
        raise IOFailure(f"cannot write {traj_path}") from exc
    manifest = {
        "config_version": cfg.config_version,
        "model": cfg.model,
        "observation": cfg.observation,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "gamma": model.gamma,
        "reference_scheme": cfg.reference_scheme,
        "reference_n": cfg.reference_n,
        "seed_mix": SEED_MIX_NAME,
        "trajectory_sha256": _sha256(traj_path),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return traj_path


def _load_dataset(cfg: ExperimentConfig, out: Path) -> tuple[dict, Trajectory]:
    manifest_path = out / "manifest.json"
    traj_path = out / "trajectory.csv"
    if not manifest_path.exists() or not traj_path.exists():
        raise IOFailure(f"dataset not found in {out}; run simulate first")
    manifest = json.loads(manifest_path.read_text())
    if manifest["trajectory_sha256"] != _sha256(traj_path):
        raise ConfigError("trajectory.csv does not match the manifest hash")
    for key in ("model", "observation", "horizon", "seed"):
        if manifest[key] != getattr(cfg, key):
            raise ConfigError(f"config {key} disagrees with the dataset manifest")
    return manifest, Trajectory.from_csv(traj_path.read_text())


def _run_scheme(
    scheme, model, observations, n: int, run_seed: int
) -> tuple[list, list[float]]:
    """Run a filter over all observations, timing each step (ms)."""
    summaries, walls = [], []
    if isinstance(scheme, QmcScheme):
        prior = GaussianMixture(
            model.prior_mean[None, :], model.prior_cov, np.array([1.0])
        )
        particles = tqmc_sample(prior, n, derive_seed(run_seed, 0, "init"))
        state = WeightedEnsemble.equal(particles)
        for t, y in enumerate(observations, 1):
            tic = time.perf_counter()
            state, summary = tqmc_filter_step(
                scheme, state, y, model, derive_seed(run_seed, t)
            )
            walls.append(1e3 * (time.perf_counter() - tic))
            summaries.append(summary)
    else:
        rng = np.random.default_rng(run_seed)
        state = initial_ensemble(model, n, rng)
        for y in observations:
            tic = time.perf_counter()
            state, summary = filter_step(scheme, state, y, model, rng)
            walls.append(1e3 * (time.perf_counter() - tic))
            summaries.append(summary)
    return summaries, walls


def cmd_reference(cfg: ExperimentConfig, out: Path) -> Path:
    """Compute the reference ensembles (one weighted ensemble per step)."""
    manifest, traj = _load_dataset(cfg, out)
    model = build_benchmark(cfg.model, cfg.observation)
    scheme = parse_scheme(cfg.reference_scheme)
    run_seed = derive_seed(cfg.seed, "reference")
    summaries, _ = _run_scheme(scheme, model, traj.observations, cfg.reference_n,
                               run_seed)
    arrays: dict[str, np.ndarray] = {}
    bandwidths = []
    for t, summary in enumerate(summaries, 1):
        arrays[f"particles_{t}"] = summary.analysis.particles
        arrays[f"log_weights_{t}"] = summary.analysis.log_weights
        bandwidths.append(
            diagnostics.median_bandwidth(summary.analysis.particles).bandwidth_sq
        )
    arrays["bandwidth_sq"] = np.array(bandwidths)
    arrays["meta"] = np.frombuffer(
        json.dumps(
            {
                "scheme": cfg.reference_scheme,
                "n": cfg.reference_n,
                "trajectory_sha256": manifest["trajectory_sha256"],
            }
        ).encode(),
        dtype=np.uint8,
    )
    ref_path = out / "reference.npz"
    with open(ref_path, "wb") as fh:
        np.savez(fh, **arrays)
    return ref_path


def _load_reference(out: Path, manifest: dict) -> tuple[list[WeightedEnsemble],
                                                        list[KernelSpec]]:
    ref_path = out / "reference.npz"
    if not ref_path.exists():
        raise IOFailure(f"{ref_path} not found; run reference first")
    with np.load(ref_path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["trajectory_sha256"] != manifest["trajectory_sha256"]:
            raise ConfigError("reference was computed for a different dataset")
        ensembles, kernels = [], []
        for t, bw in enumerate(data["bandwidth_sq"], 1):
            ensembles.append(
                WeightedEnsemble(data[f"particles_{t}"], data[f"log_weights_{t}"])
            )
            kernels.append(KernelSpec(float(bw)))
    return ensembles, kernels


_WORKER_CTX: dict = {}


def _worker_init(config_path: str, out_dir: str, seed: int | None,
                 full_scale: bool) -> None:
    cfg = ExperimentConfig.load(Path(config_path), seed, full_scale)
    out = Path(out_dir)
    manifest, traj = _load_dataset(cfg, out)
    reference, kernels = _load_reference(out, manifest)
    _WORKER_CTX.update(
        cfg=cfg,
        model=build_benchmark(cfg.model, cfg.observation),
        observations=traj.observations,
        reference=reference,
        kernels=kernels,
    )


def _sweep_cell(cell: tuple[str, int, int]) -> list[str]:
    scheme_name, n, rep = cell
    ctx = _WORKER_CTX
    cfg, model = ctx["cfg"], ctx["model"]
    scheme = parse_scheme(scheme_name)
    run_seed = derive_seed(cfg.seed, "sweep", scheme_name, n, rep)
    integrand = lambda x: test_integrand(x, model.gamma)  # noqa: E731
    horizon = len(ctx["observations"])
    rows: list[RunRecord] = []
    try:
        summaries, walls = _run_scheme(
            scheme, model, ctx["observations"], n, run_seed
        )
        for t, (summary, wall) in enumerate(zip(summaries, walls), 1):
            ref = ctx["reference"][t - 1]
            rows.append(
                RunRecord(
                    method=scheme_name,
                    n=n,
                    t=t,
                    rep=rep,
                    mae=diagnostics.mae(summary.analysis, ref, integrand),
                    mmd_sq=diagnostics.mmd_sq(
                        summary.analysis, ref, ctx["kernels"][t - 1]
                    ),
                    ess=summary.ess,
                    weight_cv_sq=summary.weight_cv_sq,
                    wall_ms=wall,
                )
            )
    except MixEnkfError as exc:
        for t in range(len(rows) + 1, horizon + 1):
            rows.append(
                RunRecord(
                    method=scheme_name, n=n, t=t, rep=rep,
                    status=type(exc).__name__,
                )
            )
    return [row.to_csv_row() for row in rows]


def cmd_sweep(cfg: ExperimentConfig, out: Path, config_path: Path,
              seed_override: int | None = None, full_scale: bool = False,
              workers: int = 1) -> Path:
    """Run every (scheme, N, repetition) cell and append rows to records.csv.

    Cells are independent jobs; results are written in canonical order by a
    single appender regardless of worker count, so the CSV is deterministic.
    """
    manifest, _ = _load_dataset(cfg, out)
    _load_reference(out, manifest)  # fail fast before spawning workers
    cells = [
        (scheme, n, rep)
        for scheme in cfg.schemes
        for n in cfg.particle_grid
        for rep in range(cfg.repetitions)
    ]
    init_args = (str(config_path), str(out), seed_override, full_scale)
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=init_args
        ) as pool:
            results = list(pool.map(_sweep_cell, cells, chunksize=4))
    else:
        _worker_init(*init_args)
        results = [_sweep_cell(cell) for cell in cells]
    csv_path = out / "records.csv"
    with open(csv_path, "w") as fh:
        fh.write(RUN_RECORD_HEADER + "\n")
        for rows in results:
            for row in rows:
                fh.write(row + "\n")
    return csv_path


def load_records(csv_path: Path) -> list[RunRecord]:
    try:
        lines = Path(csv_path).read_text().splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read {csv_path}") from exc
    if not lines or lines[0] not in (
        RUN_RECORD_HEADER,
        RUN_RECORD_HEADER.rsplit(",", 1)[0],
    ):
        raise MalformedCSV(f"unexpected header in {csv_path}")
    records = []
    for i, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) not in (9, 10):
            raise MalformedCSV(f"line {i}: expected 9 or 10 fields")
        try:
            records.append(RunRecord.from_csv_row(fields))
        except (ValueError, IndexError) as exc:
            raise MalformedCSV(f"line {i}: {exc}") from exc
    return records


def fit_loglog_slope(ns: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    mask = np.asarray(values) > 0
    if mask.sum() < 2:
        return float("nan")
    coeffs = np.polyfit(np.log(np.asarray(ns, float)[mask]),
                        np.log(np.asarray(values, float)[mask]), 1)
    return float(coeffs[0])


def summarize_records(records: list[RunRecord]) -> dict:
    """Median and mean of each metric per (method, t, N), plus failures."""
    ok = [r for r in records if r.status == "ok"]
    failed = [r for r in records if r.status != "ok"]
    summary: dict = {}
    for metric in ("mae", "mmd_sq"):
        per_group: dict = {}
        for r in ok:
            per_group.setdefault((r.method, r.t, r.n), []).append(
                getattr(r, metric)
            )
        curves: dict = {}
        for (method, t, n), vals in per_group.items():
            curves.setdefault((method, t), []).append(
                (n, float(np.median(vals)), float(np.mean(vals)))
            )
        summary[metric] = {
            key: sorted(points) for key, points in curves.items()
        }
    summary["failures"] = failed
    return summary


def cmd_report(cfg: ExperimentConfig, out: Path) -> Path:
    """Emit log-log convergence plots (SVG) and a fitted-slope table."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mixenkf"

    records = load_records(out / "records.csv")
    summary = summarize_records(records)
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    slope_lines = ["metric\tt\tmethod\tslope_median\tslope_mean\tn_points"]
    for metric in ("mae", "mmd_sq"):
        curves = summary[metric]
        times = sorted({t for (_, t) in curves})
        for t in times:
            fig, ax = plt.subplots(figsize=(6, 4.5))
            for (method, tt), pts in sorted(curves.items()):
                if tt != t:
                    continue
                ns = np.array([p[0] for p in pts])
                med = np.array([p[1] for p in pts])
                mean = np.array([p[2] for p in pts])
                ax.loglog(ns, np.maximum(med, 1e-300), marker="o", label=method)
                slope_lines.append(
                    f"{metric}\t{t}\t{method}\t{fit_loglog_slope(ns, med):.4f}"
                    f"\t{fit_loglog_slope(ns, mean):.4f}\t{len(ns)}"
                )
            ax.set_xlabel("ensemble size N")
            ax.set_ylabel(f"median {metric}")
            ax.set_title(f"{metric} at t={t}")
            ax.grid(True, which="both", alpha=0.3)
            ax.legend(fontsize=8)
            fig.tight_layout()
            fig.savefig(
                report_dir / f"{metric}_t{t}.svg", metadata={"Date": None}
            )
            plt.close(fig)

    failures = summary["failures"]
    fail_lines = [
        f"{r.method},{r.n},{r.t},{r.rep},{r.status}" for r in failures
    ]
    slopes_path = report_dir / "slopes.txt"
    slopes_path.write_text(
        "\n".join(slope_lines)
        + "\n\nexcluded rows (status != ok): "
        + (str(len(fail_lines)) if fail_lines else "0")
        + ("\n" + "\n".join(fail_lines) + "\n" if fail_lines else "\n")
    )
    return slopes_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mixenkf",
        description="Filtering benchmark harness (simulate | reference | sweep | report)",
    )
    parser.add_argument(
        "command", choices=["simulate", "reference", "sweep", "report"]
    )
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--full-scale",
        action="store_true",
        help="use the full-scale reference ensemble size",
    )
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    cfg = ExperimentConfig.load(args.config, args.seed, args.full_scale)
    if args.command == "simulate":
        path = cmd_simulate(cfg, args.out)
    elif args.command == "reference":
        path = cmd_reference(cfg, args.out)
    elif args.command == "sweep":
        path = cmd_sweep(
            cfg, args.out, args.config, args.seed, args.full_scale, args.workers
        )
    else:
        path = cmd_report(cfg, args.out)
    print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
