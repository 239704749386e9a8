"""Per-group metrics and plot-ready tables from protocol results.

All numbers come from the synthetic driver model.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from racecoach.scoring import Termination


def _sd(values) -> float:
    """Sample SD; zero for fewer than two values."""
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def _mean(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.mean()) if v.size else float("nan")


@dataclass(frozen=True)
class GroupMetrics:
    """Testing-phase metrics of one group.

    Lap time and violation area are averaged per subject over completed
    laps only, then across subjects.
    """

    subjects: int
    trials: int
    mean_score: float
    sd_score: float
    sd_within_group: float
    mean_sd_within_subjects: float
    success_rate: float
    mean_lap_time: float
    sd_lap_time: float
    mean_area: float
    sd_area: float


@dataclass(frozen=True)
class SessionSummary:
    """``groups[group][phase]`` for the testing phases ``pre`` and ``post``."""

    groups: dict
    synthetic: bool = True

    def metric(self, group: str, phase: str = "post") -> GroupMetrics:
        return self.groups[group][phase]

    def to_dict(self) -> dict:
        def clean(m):
            return {k: (None if isinstance(v, float) and v != v else v) for k, v in asdict(m).items()}
        return {"synthetic": self.synthetic,
                "groups": {g: {ph: clean(m) for ph, m in phases.items()}
                           for g, phases in self.groups.items()}}


def group_metrics(records) -> GroupMetrics:
    by_subject: dict[int, list] = {}
    for rec in records:
        by_subject.setdefault(rec.subject, []).append(rec)
    subj_means = [_mean([r.S_R for r in rs]) for rs in by_subject.values()]
    subj_sds = [_sd([r.S_R for r in rs]) for rs in by_subject.values()]
    laps, areas = [], []
    for rs in by_subject.values():
        done = [r for r in rs if r.termination is Termination.FINISHED]
        if done:
            laps.append(_mean([r.T_l for r in done]))
            areas.append(_mean([r.A_B for r in done]))
    n_done = sum(r.termination is Termination.FINISHED for r in records)
    return GroupMetrics(
        subjects=len(by_subject),
        trials=len(records),
        mean_score=_mean(subj_means),
        sd_score=_sd([r.S_R for r in records]),
        sd_within_group=_sd(subj_means),
        mean_sd_within_subjects=_mean(subj_sds),
        success_rate=n_done / len(records) if records else float("nan"),
        mean_lap_time=_mean(laps),
        sd_lap_time=_sd(laps),
        mean_area=_mean(areas),
        sd_area=_sd(areas),
    )


def summarize_records(records, phases=("pre", "post")) -> SessionSummary:
    groups: dict[str, dict] = {}
    order = []
    for rec in records:
        if rec.group not in order:
            order.append(rec.group)
    for g in order:
        groups[g] = {}
        for ph in phases:
            rs = [r for r in records if r.group == g and r.phase == ph]
            if rs:
                groups[g][ph] = group_metrics(rs)
    return SessionSummary(groups)


def training_curves(records) -> list[tuple]:
    """Per group and trial: mean and SD of the level and of the score across subjects."""
    rows = []
    keys = []
    for r in records:
        if (r.group, r.trial) not in keys:
            keys.append((r.group, r.trial))
    for g, trial in keys:
        rs = [r for r in records if r.group == g and r.trial == trial]
        rows.append((g, trial, rs[0].phase, _mean([r.L for r in rs]), _sd([r.L for r in rs]),
                     _mean([r.S_R for r in rs]), _sd([r.S_R for r in rs])))
    return rows


def path_distribution(path_rows, bin_width: float = 5.0) -> list[tuple]:
    """Mean lateral offset and its SD per group and station bin (testing laps)."""
    acc: dict[tuple, list] = {}
    for g, _, _, s, e in path_rows:
        acc.setdefault((g, int(s // bin_width)), []).append(e)
    return [(g, (b + 0.5) * bin_width, _mean(v), _sd(v), len(v))
            for (g, b), v in sorted(acc.items(), key=lambda kv: (kv[0][0], kv[0][1]))]


def read_paths(path) -> list[tuple]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append((row[0], int(row[1]), int(row[2]), float(row[3]), float(row[4])))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
    return rows


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_summary(summary: SessionSummary, out_dir) -> Path:
    out = Path(out_dir) / "summary.json"
    out.write_text(json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8")
    return out


def summarize(results_path, out_dir=None, paths_path=None) -> SessionSummary:
    """Summary metrics plus plot tables for a ``results.csv``.

    Writes ``summary.json``, ``training_curves.csv`` and, when a
    ``paths.csv`` is found next to the results, ``path_distribution.csv``.
    """
    from racecoach.harness.protocol import read_results

    records = read_results(results_path)
    summary = summarize_records(records)
    if out_dir is None:
        return summary
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(summary, out)
    _write_csv(out / "training_curves.csv",
               ("group", "trial", "phase", "mean_L", "sd_L", "mean_S_R", "sd_S_R"),
               training_curves(records))
    paths_path = Path(paths_path) if paths_path else Path(results_path).with_name("paths.csv")
    if paths_path.exists():
        _write_csv(out / "path_distribution.csv", ("group", "s", "mean_e_lat", "sd_e_lat", "n"),
                   path_distribution(read_paths(paths_path)))
    return summary
