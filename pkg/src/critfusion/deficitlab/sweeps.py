"""Grids of deficit runs with matched-seed controls.

Every cell is an independent training run.  Cells may execute in a process
pool; results are merged in grid order, so a table does not depend on the
number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .deficits import DeficitSchedule
from .task import generate_task
from .train import LabConfig, RunRecord, run, with_depth


def derived_seed(base_seed: int, replicate: int) -> int:
    """Seed of replicate ``replicate``; a deficit run and its control share it."""
    return int(base_seed) ^ int(replicate)


def replicate_seeds(base_seed: int, n: int) -> list[int]:
    return [derived_seed(base_seed, i) for i in range(n)]


@dataclass(frozen=True)
class Cell:
    schedule: DeficitSchedule
    seed: int
    epochs: int
    n_blocks: int


def _run_cell(args) -> RunRecord:
    config, cell = args
    cfg = with_depth(config, cell.n_blocks)
    return run(cfg, cell.schedule, cell.seed, epochs=cell.epochs, data=generate_task(cfg.task))


def run_cells(config: LabConfig, cells: list[Cell], jobs: int = 1) -> list[RunRecord]:
    """Run ``cells`` and return records in cell order; ``jobs > 1`` uses processes."""
    work = [(config, c) for c in cells]
    if jobs <= 1 or len(cells) <= 1:
        return [_run_cell(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, work))


ROW_FIELDS = (
    "window", "kind", "start", "length", "n_blocks", "seed", "epochs", "final_acc", "control_acc",
    "delta_acc", "impairment", "mean_abs_rsv", "frac_polarized", "mean_rsv",
    "info_both", "info_a_alone", "info_b_alone", "failed",
)


@dataclass
class SweepTable:
    rows: list[dict]
    records: list[RunRecord]
    controls: list[RunRecord]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def seed_mean(self, value: str, by: str = "window") -> dict:
        """Mean of ``value`` over seeds per distinct ``by`` key, in grid order."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(r[by], []).append(r[value])
        return {k: float(np.mean(v)) for k, v in groups.items()}


def _row(cell: Cell, rec: RunRecord, ctrl: RunRecord) -> dict:
    rsv = rec.rsv or {}
    info = rec.usable_info or {}
    acc, cacc = rec.final_test_acc, ctrl.final_test_acc
    return {
        "window": cell.schedule.label(),
        "kind": cell.schedule.kind,
        "start": cell.schedule.start,
        "length": cell.schedule.length,
        "n_blocks": cell.n_blocks,
        "seed": cell.seed,
        "epochs": cell.epochs,
        "final_acc": acc,
        "control_acc": cacc,
        "delta_acc": acc - cacc,
        "impairment": cacc - acc,
        "mean_abs_rsv": rsv.get("mean_abs", math.nan),
        "frac_polarized": rsv.get("frac_polarized", math.nan),
        "mean_rsv": rsv.get("mean", math.nan),
        "info_both": info.get("both", math.nan),
        "info_a_alone": info.get("a_alone", math.nan),
        "info_b_alone": info.get("b_alone", math.nan),
        "failed": bool(rec.failed or ctrl.failed),
    }


def _epochs_for(config: LabConfig, schedule: DeficitSchedule, post_epochs: int | None) -> int:
    return config.epochs if post_epochs is None else schedule.end + post_epochs


def _sweep(config, pairs, seeds, post_epochs, jobs) -> SweepTable:
    # one control per (epochs, depth, seed), shared by all windows that match it
    cells, controls = [], {}
    for schedule, n_blocks in pairs:
        epochs = _epochs_for(config, schedule, post_epochs)
        schedule.check_within(epochs)
        for seed in seeds:
            cells.append(Cell(schedule, seed, epochs, n_blocks))
            controls.setdefault((epochs, n_blocks, seed), Cell(DeficitSchedule(), seed, epochs, n_blocks))
    ctrl_cells = list(controls.values())
    records = run_cells(config, ctrl_cells + cells, jobs)
    ctrl_records = records[:len(ctrl_cells)]
    by_key = {(c.epochs, c.n_blocks, c.seed): r for c, r in zip(ctrl_cells, ctrl_records)}
    runs = records[len(ctrl_cells):]
    rows = [_row(c, r, by_key[(c.epochs, c.n_blocks, c.seed)]) for c, r in zip(cells, runs)]
    return SweepTable(rows, runs, ctrl_records)


def critical_period_sweep(
    config: LabConfig,
    windows: list[DeficitSchedule],
    seeds: list[int],
    post_epochs: int | None = None,
    jobs: int = 1,
) -> SweepTable:
    """One run per (window, seed) against a no-deficit control of equal length.

    With ``post_epochs`` set, each run lasts ``window.end + post_epochs``
    epochs; otherwise every run lasts ``config.epochs``.
    """
    n_blocks = config.net.n_blocks
    return _sweep(config, [(w, n_blocks) for w in windows], seeds, post_epochs, jobs)


def depth_sweep(
    config: LabConfig,
    depths: list[int],
    deficit: DeficitSchedule,
    seeds: list[int],
    post_epochs: int | None = None,
    jobs: int = 1,
) -> SweepTable:
    """The same deficit at each trunk depth, against matched-depth controls."""
    if not depths or any(d < 1 for d in depths):
        raise ValueError("trunk depths must be >= 1")
    return _sweep(config, [(deficit, d) for d in depths], seeds, post_epochs, jobs)


def initial_windows(kind: str, lengths, **kw) -> list[DeficitSchedule]:
    return [DeficitSchedule.initial(kind, t0, **kw) for t0 in lengths]


def sliding_windows(kind: str, starts, length: int, **kw) -> list[DeficitSchedule]:
    return [DeficitSchedule.sliding(kind, s, length, **kw) for s in starts]


def with_recon(config: LabConfig, recon_lambda: float) -> LabConfig:
    return replace(config, recon_lambda=recon_lambda)
