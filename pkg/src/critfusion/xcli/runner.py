"""Dispatch validated configs to the numerical modules and persist run directories.

A run directory holds ``config.yaml`` (the validated config), the CSV and SVG
artifacts of its kind, and ``manifest.json`` listing every other file with
its sha256.  CSV bytes depend only on the config (never on ``jobs`` or the
clock); timing lives in the manifest.
"""
from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from .. import __version__, gradsim, lindyn, rsv
from ..deficitlab import sweeps
from ..deficitlab.task import generate_task, write_dataset_csv
from ..deficitlab.train import RunRecord
from ..deficitlab.train import run as train_run
from ..fixtures import resolve_matrix
from .config import ConfigError, ExperimentConfig, build_objects
from .csvout import write_csv
from .svg import Figure

TOOL = "critfusion"
MANIFEST = "manifest.json"


class ComputationError(RuntimeError):
    """A numerical run aborted; the run directory holds partial results."""


@dataclass
class RunManifest:
    tool: str
    version: str
    kind: str
    config_hash: str
    seed: int
    started: str
    finished: str
    status: str  # ok | failed
    error: str | None = None
    files: list[dict] = field(default_factory=list)

    def write(self, directory: Path) -> Path:
        path = Path(directory) / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, directory: str | Path) -> "RunManifest":
        path = Path(directory) / MANIFEST
        try:
            return cls(**json.loads(path.read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"{directory}: not a run directory ({exc})") from None

    def checksums(self) -> dict[str, str]:
        return {f["path"]: f["sha256"] for f in self.files}

    def verify(self, directory: str | Path) -> list[str]:
        """Problems found: missing, altered or unlisted files."""
        directory = Path(directory)
        problems = []
        listed = self.checksums()
        present = {p for p in _files_under(directory) if p != MANIFEST}
        for p in sorted(present - set(listed)):
            problems.append(f"unlisted file {p}")
        for p, digest in sorted(listed.items()):
            if p not in present:
                problems.append(f"missing file {p}")
            elif _sha256(directory / p) != digest:
                problems.append(f"checksum mismatch {p}")
        return problems


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _files_under(directory: Path) -> list[str]:
    return sorted(p.relative_to(directory).as_posix() for p in directory.rglob("*") if p.is_file())


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def prepare_output(directory: Path, overwrite: bool) -> Path:
    directory = Path(directory)
    if directory.exists():
        if not directory.is_dir():
            raise ConfigError(f"out: {directory} exists and is not a directory")
        if any(directory.iterdir()):
            if not overwrite:
                raise ConfigError(f"out: {directory} is not empty (set overwrite: true to replace it)")
            shutil.rmtree(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def finish(directory: Path, kind: str, config_hash: str, seed: int, started: str, error: str | None) -> RunManifest:
    files = [
        {"path": p, "sha256": _sha256(directory / p), "bytes": (directory / p).stat().st_size}
        for p in _files_under(directory)
        if p != MANIFEST
    ]
    manifest = RunManifest(TOOL, __version__, kind, config_hash, seed, started, _now(),
                           "failed" if error else "ok", error, files)
    manifest.write(directory)
    return manifest


def run(config: ExperimentConfig) -> RunManifest:
    """Execute ``config`` and return the manifest of its run directory.

    A numerical failure still produces a manifest, flagged ``failed``.
    """
    out = prepare_output(config.output_dir(), config.overwrite)
    started = _now()
    snapshot = config.model_dump(mode="json", exclude={"out", "jobs", "overwrite"})
    (out / "config.yaml").write_text(yaml.safe_dump(snapshot, sort_keys=True))
    error = None
    try:
        EXPERIMENTS[config.kind](config, out)
    except ComputationError as exc:
        error = str(exc)
    return finish(out, config.kind, config.hash(), config.seed, started, error)


# lindyn ---------------------------------------------------------------------------


def run_lindyn(config: ExperimentConfig, out: Path) -> None:
    p = config.params
    sigma = lindyn.as_sigma(resolve_matrix(p.matrix))
    params = lindyn.DynamicsParams(tau=p.tau, a0=p.a0, time_grid=np.linspace(0.0, p.t_max, p.n_times))
    modes = lindyn.decompose(sigma)
    write_csv(out / "modes.csv", ["mode", "singular_value", "active"],
              [(a, s, act) for a, (s, act) in enumerate(zip(modes.singular_values, modes.active))])
    for model in p.models:
        if p.drop is None:
            trajs = lindyn.source_trajectories(sigma, params, model)
            rows = list(lindyn.trajectory_table(trajs, "full"))
            onsets = [(t.source_index, lindyn.half_final_onset(t.times, t.weight_norm), None, None, None)
                      for t in trajs]
            dropped = []
        else:
            rep = lindyn.compare_counterfactual(sigma, p.drop, params, model)
            rows = list(rep.rows())
            trajs, dropped = rep.full, rep.dropped_run
            onsets = [(k, rep.onset_full[k], rep.onset_dropped[k], rep.onset_delta(k), rep.max_abs_diff[k])
                      for k in sorted(rep.max_abs_diff)]
        write_csv(out / f"trajectories_{model}.csv", ["time", "source_index", "weight_norm", "variant"], rows)
        write_csv(out / f"onsets_{model}.csv",
                  ["source_index", "onset_full", "onset_dropped", "onset_delta", "max_abs_diff"], onsets)
        fig = Figure(f"{model} model: per-source weight norm", "time", "column norm of W")
        for tr in trajs:
            fig.line(tr.times, tr.weight_norm, f"source {tr.source_index}", color=tr.source_index)
        for tr in dropped:
            if tr.source_index != p.drop:
                fig.line(tr.times, tr.weight_norm, "", color=tr.source_index, dashed=True)
        fig.save(out / f"trajectories_{model}.svg")


# gradsim --------------------------------------------------------------------------


def run_gradsim(config: ExperimentConfig, out: Path) -> None:
    p = config.params
    mats, start = [], 0
    for ph in p.phases:
        mats.append((resolve_matrix(ph.matrix), (start, start + ph.steps)))
        start += ph.steps
    try:
        schedule = gradsim.PhaseSchedule(tuple(mats))
    except ValueError as exc:
        raise ConfigError(f"gradsim.phases: {exc}") from None
    first = schedule.phases[0][0]
    n_out, n_in = first.shape
    sim = gradsim.SimConfig(eta=p.eta, total_steps=schedule.total_steps, record_stride=p.record_stride,
                            init=p.init, scale=p.scale, a0=p.a0, seed=config.seed)
    try:
        chain = gradsim.init_chain(n_in, n_out, p.hidden or n_in, p.depth, p.init, config.seed, p.scale, p.a0,
                                   sigma=first)
    except ValueError as exc:
        raise ConfigError(f"gradsim: {exc}") from None
    error = None
    try:
        traj = gradsim.simulate(chain, schedule, sim)
    except gradsim.DivergenceError as exc:
        traj, error = exc.partial, f"gradient descent diverged at step {exc.step}"
    norms = traj.column_norms()
    write_csv(out / "trajectory.csv", ["step", "time", "source_index", "weight_norm"],
              [(int(s), float(t), k, float(norms[r, k]))
               for r, (s, t) in enumerate(zip(traj.steps, traj.times)) for k in range(norms.shape[1])])
    write_csv(out / "loss.csv", ["step", "time", "loss"],
              [(int(s), float(t), float(l)) for s, t, l in zip(traj.steps, traj.times, traj.losses)])
    if len(traj.steps):
        strengths = gradsim.mode_strengths(traj, first)
        modes = lindyn.decompose(first)
        closed = len(schedule.phases) == 1 and p.init == "spectral" and p.depth == 2
        rows = []
        for r, (s, t) in enumerate(zip(traj.steps, traj.times)):
            for a in range(strengths.shape[1]):
                cf = None
                if closed and modes.active[a]:
                    cf = lindyn.mode_strength(float(modes.singular_values[a]), p.a0, 1.0, float(t))
                rows.append((int(s), float(t), a, float(strengths[r, a]), cf))
        write_csv(out / "mode_strengths.csv", ["step", "time", "mode", "simulated", "closed_form"], rows)
        onsets = gradsim.trajectory_onsets(traj)
        write_csv(out / "onsets.csv", ["source_index", "onset_step", "onset_time"],
                  [(k, v, None if v is None else v * p.eta) for k, v in onsets.items()])
        fig = Figure("gradient descent: per-source weight norm", "time (eta * step)", "column norm of W")
        for k in range(norms.shape[1]):
            fig.line(traj.times, norms[:, k], f"source {k}", color=k)
        fig.save(out / "trajectory.svg")
    if error:
        raise ComputationError(error)


# rsv-sim --------------------------------------------------------------------------


def write_rsv(out: Path, dist: rsv.RSVDistribution, prefix: str = "rsv") -> None:
    K = dist.values.shape[1]
    write_csv(out / f"{prefix}_values.csv", ["unit", "fixed", "rsv", "dead"],
              [(i, j, float(dist.values[i, j]), bool(dist.dead[i, j]))
               for i in range(dist.unit_count) for j in range(K)])
    edges = dist.bin_edges
    write_csv(out / f"{prefix}_hist.csv", ["bin_left", "bin_right", "bin_centre", "count"],
              [(float(lo), float(hi), float((lo + hi) / 2), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], dist.counts)])
    Figure("relative source variance", "RSV", "count").histogram(edges, dist.counts).save(out / f"{prefix}_hist.svg")


def _rsv_summary(dist: rsv.RSVDistribution) -> dict:
    try:
        pol = rsv.polarization_index(dist)
        vals = (pol.mean_abs, pol.frac_polarized, pol.mean)
    except ValueError:
        vals = (float("nan"),) * 3
    return {"mean_abs": vals[0], "frac_polarized": vals[1], "mean": vals[2],
            "dead_fraction": float(dist.dead.mean()), "unit_count": dist.unit_count,
            "fixed_sample_count": dist.values.shape[1]}


def run_rsv_sim(config: ExperimentConfig, out: Path) -> None:
    p = config.params
    rcfg = build_objects(config)["rsv"]
    if p.activations:
        try:
            va, vb = rsv.read_activation_dump(p.activations)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"rsv_sim.activations: {exc}") from None
        dist = rsv.rsv_from_activations(va, vb, rcfg.dead_unit_epsilon)
    else:
        model = rsv.SyntheticRSVModel(p.alpha, p.beta, p.sigma0, p.sigma_a, p.sigma_b, p.unit_count, p.mixing)
        dist = rsv.sample_synthetic_model(model, rcfg)
        w, reversed_ = model.unit_weights(rcfg.seed)
        means = dist.unit_means()
        write_csv(out / "closed_form.csv", ["unit", "weight_on_a", "reversed", "closed_form_rsv", "monte_carlo_rsv"],
                  [(i, float(w[i]), bool(reversed_[i]),
                    rsv.synthetic_closed_form_rsv(float(w[i]), p.sigma0, p.sigma_a, p.sigma_b), float(means[i]))
                   for i in range(model.unit_count)])
    write_rsv(out, dist)
    s = _rsv_summary(dist)
    write_csv(out / "summary.csv", list(s), [tuple(s.values())])


# deficit and sweep ------------------------------------------------------------------

SUMMARY_FIELDS = (
    "seed", "window", "kind", "start", "length", "n_blocks", "epochs", "recon_lambda", "mask_prob",
    "final_test_acc", "final_train_acc", "final_test_loss", "mean_abs_rsv", "frac_polarized", "mean_rsv",
    "dead_fraction", "info_both", "info_a_alone", "info_b_alone", "failed",
)


def record_summary(rec: RunRecord) -> dict:
    from ..deficitlab.deficits import DeficitSchedule

    sched = DeficitSchedule(**rec.schedule)
    r = rec.rsv or {}
    info = rec.usable_info or {}
    nan = float("nan")
    return {
        "seed": rec.seed,
        "window": sched.label(),
        "kind": sched.kind if sched.length > 0 else "none",
        "start": sched.start,
        "length": sched.length,
        "n_blocks": rec.config["net"]["n_blocks"],
        "epochs": rec.config["epochs"],
        "recon_lambda": rec.config["recon_lambda"],
        "mask_prob": rec.config["mask_prob"],
        "final_test_acc": rec.final_test_acc,
        "final_train_acc": rec.train_acc[-1] if rec.train_acc else nan,
        "final_test_loss": rec.test_loss[-1] if rec.test_loss else nan,
        "mean_abs_rsv": r.get("mean_abs", nan),
        "frac_polarized": r.get("frac_polarized", nan),
        "mean_rsv": r.get("mean", nan),
        "dead_fraction": r.get("dead_fraction", nan),
        "info_both": info.get("both", nan),
        "info_a_alone": info.get("a_alone", nan),
        "info_b_alone": info.get("b_alone", nan),
        "failed": rec.failed,
    }


def write_record(out: Path, rec: RunRecord) -> None:
    """metrics.csv, rsv_*.csv, summary.csv and plots for one training run."""
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", ["epoch", "split", "loss", "accuracy"], list(rec.metric_rows()))
    if rec.rsv_values is not None:
        write_rsv(out, rsv.make_distribution(rec.rsv_values, rec.rsv_dead))
    s = record_summary(rec)
    write_csv(out / "summary.csv", list(SUMMARY_FIELDS), [tuple(s[k] for k in SUMMARY_FIELDS)])
    if rec.test_acc:
        epochs = np.arange(len(rec.test_acc))
        fig = Figure("accuracy per epoch", "epoch", "accuracy")
        fig.line(epochs, rec.train_acc, "train", 0).line(epochs, rec.test_acc, "test", 1)
        fig.save(out / "metrics.svg")


def run_deficit(config: ExperimentConfig, out: Path) -> None:
    p = config.params
    objs = build_objects(config)
    lab, schedule = objs["lab"], objs["schedule"]
    data = generate_task(lab.task)
    if p.write_dataset:
        write_dataset_csv(data.train, lab.task, out / "dataset_train.csv")
        write_dataset_csv(data.test, lab.task, out / "dataset_test.csv")
    rec = train_run(lab, schedule, config.seed, data=data)
    write_record(out, rec)
    if rec.failed:
        raise ComputationError(rec.failure)


SWEEP_VARIABLE = {"initial": "length", "sliding": "start", "depth": "n_blocks"}


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in text)


def group_stats(rows: list[dict], by: str, fields: list[str]) -> list[dict]:
    """Mean and sample std (0 for a single seed) per distinct ``by`` value, in first-seen order."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[by], []).append(r)
    out = []
    for key, members in groups.items():
        g = {by: key, "n": len(members)}
        for f in fields:
            v = np.array([float(m[f]) for m in members])
            g[f"{f}_mean"] = float(v.mean())
            g[f"{f}_std"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out.append(g)
    return out


def run_sweep(config: ExperimentConfig, out: Path) -> None:
    p = config.params
    lab = build_objects(config)["lab"]
    seeds = sweeps.replicate_seeds(config.seed, p.n_seeds)
    kw = {"gain": p.gain, "noise_std": p.noise_std, "pathway": p.pathway}
    try:
        if p.mode == "initial":
            table = sweeps.critical_period_sweep(lab, sweeps.initial_windows(p.deficit, p.lengths, **kw), seeds,
                                                 p.post_epochs, config.jobs)
        elif p.mode == "sliding":
            table = sweeps.critical_period_sweep(lab, sweeps.sliding_windows(p.deficit, p.starts, p.length, **kw),
                                                 seeds, p.post_epochs, config.jobs)
        else:
            from ..deficitlab.deficits import DeficitSchedule

            deficit = DeficitSchedule.initial(p.deficit, p.length, **kw)
            table = sweeps.depth_sweep(lab, p.depths, deficit, seeds, p.post_epochs, config.jobs)
    except ValueError as exc:
        raise ConfigError(f"sweep: {exc}") from None
    for i, (row, rec) in enumerate(zip(table.rows, table.records)):
        write_record(out / "runs" / f"{i:03d}_{_slug(row['window'])}_d{row['n_blocks']}_s{row['seed']}", rec)
    for j, rec in enumerate(table.controls):
        s = record_summary(rec)
        write_record(out / "controls" / f"{j:03d}_e{s['epochs']}_d{s['n_blocks']}_s{rec.seed}", rec)
    write_csv(out / "sweep.csv", list(sweeps.ROW_FIELDS),
              [tuple(r[k] for k in sweeps.ROW_FIELDS) for r in table.rows])
    var = SWEEP_VARIABLE[p.mode]
    fields = ["final_acc", "impairment", "frac_polarized", "mean_abs_rsv", "info_a_alone", "info_b_alone"]
    stats = group_stats(table.rows, var, fields)
    header = [var, "n"] + [f"{f}_{s}" for f in fields for s in ("mean", "std")]
    write_csv(out / "by_variable.csv", header, [tuple(g[h] for h in header) for g in stats])
    xs = table.column(var)
    for f, label in (("final_acc", "final test accuracy"), ("frac_polarized", "fraction polarized")):
        fig = Figure(f"{label} vs {var}", var, label)
        fig.scatter(xs, table.column(f), "per seed", 0)
        fig.errorbars([g[var] for g in stats], [g[f"{f}_mean"] for g in stats],
                      [g[f"{f}_std"] for g in stats], "mean +- std", 1)
        fig.save(out / f"{f}.svg")
    failed = [r for r in table.rows if r["failed"]]
    if failed:
        raise ComputationError(f"{len(failed)} of {len(table.rows)} sweep runs failed")


EXPERIMENTS = {
    "lindyn": run_lindyn,
    "gradsim": run_gradsim,
    "rsv-sim": run_rsv_sim,
    "deficit": run_deficit,
    "sweep": run_sweep,
}
