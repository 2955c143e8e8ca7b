"""Compare deficit runs: align by sweep variable, aggregate over seeds, plot."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import ConfigError
from .csvout import read_csv, write_csv
from .runner import MANIFEST, SUMMARY_FIELDS, RunManifest, _now, finish, group_stats, prepare_output
from .svg import Figure

VARIABLES = ("length", "start", "n_blocks")
METRICS = ["final_test_acc", "frac_polarized", "mean_abs_rsv", "info_both", "info_a_alone", "info_b_alone"]


def _run_dirs(directory: Path) -> list[Path]:
    man = RunManifest.load(directory)
    if man.kind == "deficit":
        return [directory]
    if man.kind == "sweep":
        found = sorted(p.parent for p in directory.glob("runs/*/summary.csv"))
        found += sorted(p.parent for p in directory.glob("controls/*/summary.csv"))
        return found
    raise ConfigError(f"{directory}: report compares deficit or sweep runs, not {man.kind!r}")


def _load(run_dir: Path, origin: Path) -> dict:
    rows = read_csv(run_dir / "summary.csv")
    if len(rows) != 1:
        raise ConfigError(f"{run_dir}: summary.csv must hold exactly one run")
    raw = rows[0]
    row: dict = {"source": run_dir.relative_to(origin.parent).as_posix()}
    for k in SUMMARY_FIELDS:
        v = raw[k]
        if k in ("window", "kind"):
            row[k] = v
        elif k == "failed":
            row[k] = v == "true"
        elif k in ("seed", "start", "length", "n_blocks", "epochs"):
            row[k] = int(v)
        else:
            row[k] = float(v)
    row["hist"] = row["edges"] = None
    hist_path = run_dir / "rsv_hist.csv"
    if hist_path.exists():
        hist = read_csv(hist_path)
        row["hist"] = np.array([float(h["count"]) for h in hist])
        row["edges"] = np.array([float(h["bin_left"]) for h in hist] + [float(hist[-1]["bin_right"])])
    return row


def sweep_variable(rows: list[dict]) -> str:
    """The single field that varies across deficit runs; rejects mixtures."""
    deficits = [r for r in rows if r["kind"] != "none"]
    kinds = {r["kind"] for r in deficits}
    if len(kinds) > 1:
        raise ConfigError(f"incompatible runs: deficit kinds {sorted(kinds)} cannot share one axis")
    varying = [v for v in VARIABLES if len({r[v] for r in deficits}) > 1]
    if len(varying) > 1:
        raise ConfigError(f"incompatible sweep variables: {varying} all vary")
    if varying:
        return varying[0]
    # nothing varies among deficits; depth may still vary across controls
    if len({r["n_blocks"] for r in rows}) > 1:
        return "n_blocks"
    return "length"


def _matched_control(row: dict, controls: list[dict]) -> dict | None:
    for keys in (("seed", "n_blocks", "epochs"), ("seed", "n_blocks"), ("seed",)):
        for c in controls:
            if all(c[k] == row[k] for k in keys):
                return c
    return None


def report(run_dirs: list[str | Path], out: str | Path, overwrite: bool = False) -> RunManifest:
    """Write runs.csv, comparison.csv and overlay plots for ``run_dirs`` into ``out``."""
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    rows = []
    for d in run_dirs:
        d = Path(d)
        if not (d / MANIFEST).exists():
            raise ConfigError(f"{d}: no {MANIFEST}; not a run directory")
        rows.extend(_load(r, d) for r in _run_dirs(d))
    if not rows:
        raise ConfigError("no completed runs found")
    var = sweep_variable(rows)
    out = prepare_output(Path(out), overwrite)
    started = _now()
    controls = [r for r in rows if r["kind"] == "none"]
    only_controls = len(controls) == len(rows)
    for r in rows:
        c = _matched_control(r, controls) if controls else None
        r["delta_vs_control"] = r["final_test_acc"] - c["final_test_acc"] if c is not None else float("nan")
        r["group"] = "control" if r["kind"] == "none" and not only_controls else r[var]
    run_header = ["source", "group"] + list(SUMMARY_FIELDS) + ["delta_vs_control"]
    write_csv(out / "runs.csv", run_header, [tuple(r[h] for h in run_header) for r in rows])

    # controls first, then deficit groups in order of first appearance
    ordered = sorted(rows, key=lambda r: r["group"] != "control")
    stats = group_stats(ordered, "group", METRICS + ["delta_vs_control"])
    for g in stats:
        g[var] = g["group"]
    header = [var, "n"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["delta_vs_control_mean"]
    write_csv(out / "comparison.csv", header, [tuple(g[h] for h in header) for g in stats])

    numeric = [g for g in stats if g[var] != "control"]
    deficit_rows = [r for r in rows if r["group"] != "control"]
    xs = np.array([float(g[var]) for g in numeric])
    for metric, label in (("final_test_acc", "final test accuracy"), ("frac_polarized", "fraction polarized")):
        fig = Figure(f"{label} vs {var}", var, label)
        fig.scatter([float(r[var]) for r in deficit_rows], [r[metric] for r in deficit_rows], "per seed", 0)
        if len(numeric):
            fig.errorbars(xs, [g[f"{metric}_mean"] for g in numeric], [g[f"{metric}_std"] for g in numeric],
                          "mean +- std", 1)
        fig.save(out / f"{metric}.svg")
    fig = Figure("RSV histograms (summed over seeds)", "RSV", "fraction of units")
    groups: dict = {}
    for r in rows:
        if r["hist"] is not None:
            groups.setdefault(r["group"], []).append(r)
    for i, (g, members) in enumerate(groups.items()):
        counts = np.sum([m["hist"] for m in members], axis=0)
        total = counts.sum()
        edges = members[0]["edges"]
        centres = (edges[:-1] + edges[1:]) / 2
        fig.line(centres, counts / total if total else counts, f"{var} {g}" if g != "control" else "control", i)
    fig.save(out / "rsv_hist.svg")
    return finish(out, "report", "", 0, started, None)
