"""Training protocol: pre-test, training and post-test trials for every subject of every group."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from racecoach.autonomy import OcpConfig
from racecoach.driver import DriverParams, learn, load_population, sample_population
from racecoach.fading import FadingConfig, FadingState, Group, level_for_group, next_level, write_fading_json
from racecoach.harness.config import ConfigError, ExperimentConfig, read_toml
from racecoach.harness.loop import LOG_COLUMNS
from racecoach.harness.trial import (RunResult, Stack, TrialFault, autonomy_profile, score_run,
                                     simulate)
from racecoach.scoring import (RESULT_COLUMNS, AutonomyProfile, ScoringConfig, Termination,
                               TrialRecord, seal_trial)
from racecoach.track import TrackModel, default_track, load_track
from racecoach.vehicle import VehicleParams, load_params

PHASES = ("pre", "train", "post")
PATH_COLUMNS = ("group", "subject", "trial", "s", "e_lat")
_S = LOG_COLUMNS.index("s")
_E = LOG_COLUMNS.index("e_lat")


@dataclass(frozen=True)
class Calibration:
    """Autonomy-only reference lap: ``T_mpc``, ``A_mpc`` and the time-by-station profile."""

    T_mpc: float
    A_mpc: float
    stations: tuple
    times: tuple

    def profile(self) -> AutonomyProfile:
        return AutonomyProfile(self.stations, self.times, lap_time=self.T_mpc, area=self.A_mpc)

    def scoring(self) -> ScoringConfig:
        return ScoringConfig.from_autonomy(self.T_mpc, self.A_mpc)

    def to_json(self) -> str:
        return json.dumps({"T_mpc": self.T_mpc, "A_mpc": self.A_mpc, "T_best": self.T_mpc,
                           "T_worst": 2.0 * self.T_mpc, "stations": list(self.stations),
                           "times": list(self.times)}) + "\n"

    @classmethod
    def from_file(cls, path) -> "Calibration":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(float(data["T_mpc"]), float(data.get("A_mpc", 0.0)),
                       tuple(map(float, data["stations"])), tuple(map(float, data["times"])))
        except KeyError as exc:
            raise ConfigError(f"{path}: missing calibration field {exc}") from None


def calibrate(stack: Stack) -> tuple[Calibration, RunResult]:
    """Autonomy-only lap (no driver torque, L = 100) defining the score references."""
    result = simulate(stack, level=100.0, log_stride=1)
    prof = autonomy_profile(result)
    # decimate the stored profile; the lap is sampled at every plant step
    keep = np.unique(np.concatenate([np.arange(0, prof.stations.size, 25), [prof.stations.size - 1]]))
    cal = Calibration(result.time, result.area, tuple(prof.stations[keep].tolist()),
                      tuple(prof.times[keep].tolist()))
    return cal, result


@dataclass
class Session:
    """Loaded inputs shared by every run of a protocol session."""

    stack: Stack
    calibration: Calibration
    fading: FadingConfig
    drivers: list
    master_seed: int = 0

    def __post_init__(self):
        self.scoring = self.calibration.scoring()
        self.profile = self.calibration.profile()


def build_session(config: ExperimentConfig) -> Session:
    track: TrackModel = load_track(config.path("track")) if config.path("track") else default_track()
    vehicle = load_params(config.path("vehicle")) if config.path("vehicle") else VehicleParams()
    mpc_values = dict(read_toml(config.path("mpc")).get("mpc", {})) if config.path("mpc") else {}
    mpc_values.update(config.mpc)
    fading_values = dict(read_toml(config.path("fading")).get("fading", {})) if config.path("fading") else {}
    fading_values.update(config.fading)
    stack = Stack(track, vehicle, OcpConfig.from_mapping(mpc_values))
    if config.path("scoring"):
        cal = Calibration.from_file(config.path("scoring"))
    else:
        cal, _ = calibrate(stack)
    if config.path("drivers"):
        drivers = load_population(config.path("drivers"))
        if len(drivers) < config.subjects:
            raise ConfigError(f"driver file lists {len(drivers)} drivers, {config.subjects} needed")
        drivers = drivers[:config.subjects]
    else:
        drivers = sample_population(config.subjects, config.seed)
    return Session(stack, cal, FadingConfig(**fading_values), drivers, int(config.seed))


def trial_seed(master: int, subject: int, trial: int) -> int:
    """Noise seed of one trial; shared across groups so groups see common noise."""
    return int(np.random.SeedSequence([master, subject, trial]).generate_state(1)[0])


def _run(session: Session, driver: DriverParams | None, level: float, seed: int,
         log_stride: int = 0) -> tuple[TrialRecord, RunResult]:
    result = simulate(session.stack, level=level, driver=driver, seed=seed, log_stride=log_stride)
    return score_run(result, session.stack, session.scoring, session.profile, level), result


def run_trial(session: Session, driver: DriverParams | None, *, group: str, phase: str,
              trial: int, level: float, subject: int = 0, seed: int | None = None) -> TrialRecord:
    """One lap at assistance ``level``; raises TrialFault naming the subject and trial."""
    seed = trial_seed(session.master_seed, subject, trial) if seed is None else seed
    try:
        record, _ = _run(session, driver, level, seed)
    except TrialFault as exc:
        raise TrialFault(f"{group} subject {subject} trial {trial}: {exc}") from exc
    return record.labeled(group=group, subject=subject, phase=phase, trial=trial)


def fault_record(session: Session, level: float) -> TrialRecord:
    return seal_trial(Termination.FAULT, session.scoring.T_worst, 0.0, 0.0,
                      session.stack.track.total_length, session.scoring, session.profile, level)


@dataclass
class SubjectRun:
    group: str
    subject: int
    records: list = field(default_factory=list)
    fading: FadingState | None = None
    paths: list = field(default_factory=list)
    faults: list = field(default_factory=list)
    final_driver: DriverParams | None = None


def phase_plan(pre: int, train: int, post: int):
    """``(trial, phase, K)`` for one subject; ``K`` counts training trials from 1."""
    trial = 0
    for phase, count in zip(PHASES, (pre, train, post)):
        for k in range(1, count + 1):
            trial += 1
            yield trial, phase, k


def run_subject(session: Session, group: str, subject: int, counts=(8, 25, 8),
                log_decimation: int = 0) -> SubjectRun:
    group = Group(group).value
    driver = session.drivers[subject]
    fstate = FadingState() if group == Group.FADING.value else None
    out = SubjectRun(group, subject, fading=fstate)
    for trial, phase, _ in phase_plan(*counts):
        level = level_for_group(group, fstate) if phase == "train" else 0.0
        seed = trial_seed(session.master_seed, subject, trial)
        stride = log_decimation if phase == "post" else 0
        try:
            record, result = _run(session, driver, level, seed, stride)
        except TrialFault as exc:
            out.faults.append(f"{group} subject {subject} trial {trial}: {exc}")
            record, result = fault_record(session, level), None
        record = record.labeled(group=group, subject=subject, phase=phase, trial=trial)
        out.records.append(record)
        if result is not None and stride:
            for row in result.log:
                out.paths.append((group, subject, trial, float(row[_S]) - result.start_station,
                                  float(row[_E])))
        if phase == "train":
            driver = learn(driver, record)
            if fstate is not None:
                next_level(fstate, record.S_R, session.fading)
    out.final_driver = driver
    return out


def _subject_task(args):
    session, group, subject, counts, decimation = args
    return run_subject(session, group, subject, counts, decimation)


def run_protocol(config: ExperimentConfig, session: Session | None = None, *, progress=None):
    """Run every group and subject and write ``results.csv`` plus per-subject outputs.

    Returns ``(summary, runs)``.  Faulted trials become rows with
    termination ``fault``; they never abort the session.
    """
    from racecoach.harness.summary import summarize

    out_dir = config.check_output()
    session = session or build_session(config)
    counts = (config.pre_trials, config.train_trials, config.post_trials)
    tasks = [(session, g, i, counts, config.log_decimation)
             for g in config.groups for i in range(config.subjects)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = []
            for run in pool.map(_subject_task, tasks):
                runs.append(run)
                if progress:
                    progress(run)
    else:
        runs = []
        for task in tasks:
            runs.append(_subject_task(task))
            if progress:
                progress(runs[-1])

    # single writer, deterministic (group, subject, trial) order
    runs.sort(key=lambda r: (config.groups.index(r.group), r.subject))
    records = [rec for run in runs for rec in run.records]
    write_results(out_dir / "results.csv", records)
    if config.log_decimation:
        with open(out_dir / "paths.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(PATH_COLUMNS)
            for run in runs:
                for g, subj, trial, s, e in run.paths:
                    w.writerow([g, subj, trial, repr(s), repr(e)])
    fading_dir = out_dir / "fading"
    for run in runs:
        if run.fading is not None:
            fading_dir.mkdir(exist_ok=True)
            write_fading_json(fading_dir / f"subject_{run.subject:02d}.json", run.fading)
    (out_dir / "calibration.json").write_text(session.calibration.to_json(), encoding="utf-8")
    return summarize(out_dir / "results.csv", out_dir), runs


def write_results(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def read_results(path) -> list[TrialRecord]:
    """Parse ``results.csv``; errors name the offending line."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise ValueError(f"{path}:1: expected header {','.join(RESULT_COLUMNS)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RESULT_COLUMNS):
                raise ValueError(f"{path}:{line_no}: expected {len(RESULT_COLUMNS)} fields, got {len(row)}")
            try:
                g, subj, phase, trial, L, p_l, T_l, A_B, S_T, S_A, S_R, term = row
                vals = [float(v) for v in (L, p_l, T_l, A_B, S_T, S_A, S_R)]
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError("non-finite value")
                records.append(TrialRecord(
                    p_l=vals[1], T_l=vals[2], A_B=vals[3], S_T=vals[4], S_A=vals[5], S_R=vals[6],
                    termination=Termination(term), T_raw=vals[2], A_raw=vals[3], s_f=math.nan,
                    L=vals[0], group=g, subject=int(subj), phase=phase, trial=int(trial)))
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
    return records
