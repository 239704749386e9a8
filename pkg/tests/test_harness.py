import json
from pathlib import Path

import numpy as np
import pytest

from racecoach.cli import main
from racecoach.driver import DriverParams
from racecoach.harness.config import ConfigError, ExperimentConfig, load_config
from racecoach.harness.protocol import (Calibration, Session, build_session, phase_plan, read_results,
                                        run_protocol, run_trial, trial_seed, write_results)
from racecoach.harness.summary import group_metrics, path_distribution, summarize, summarize_records
from racecoach.scoring import RESULT_COLUMNS, Termination, TrialRecord

SMALL = """
[experiment]
subjects = 2
pre_trials = 1
train_trials = 2
post_trials = 1
seed = 5
output = "out"
log_decimation = 250
"""


def rec(group, subject, phase, trial, S_R, term="finished", T=60.0, A=0.0, L=0.0):
    return TrialRecord(p_l=1.0, T_l=T, A_B=A, S_T=0.0, S_A=0.0, S_R=S_R, termination=Termination(term),
                       T_raw=T, A_raw=A, s_f=0.0, L=L, group=group, subject=subject, phase=phase,
                       trial=trial)


@pytest.fixture(scope="module")
def session(stack):
    from racecoach.harness.protocol import calibrate
    from racecoach.fading import FadingConfig
    cal, _ = calibrate(stack)
    drivers = [DriverParams(skill=0.9, noise_sigma=0.3, seed=1), DriverParams(skill=0.3, seed=2)]
    return Session(stack, cal, FadingConfig(), drivers, master_seed=5)


def test_config_defaults_and_errors(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.trials_per_subject == 41
    assert cfg.expected_rows == 3 * 16 * 41
    with pytest.raises(ConfigError, match="no groups configured"):
        ExperimentConfig(groups=())
    with pytest.raises(ConfigError):
        ExperimentConfig(train_trials=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(groups=("coached",))
    p = tmp_path / "c.toml"
    p.write_text("[experiment]\ngroups = []\n")
    with pytest.raises(ConfigError, match="no groups configured"):
        load_config(p)
    p.write_text("[experiment]\nsubject = 3\n")
    with pytest.raises(ConfigError, match="unknown"):
        load_config(p)


def test_config_paths_resolve_against_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(SMALL + '\n[paths]\ntrack = "t.csv"\n[fading]\nw1 = 0.7\nw2 = 0.3\n')
    cfg = load_config(p)
    assert cfg.output == tmp_path / "out"
    assert cfg.path("track") == tmp_path / "t.csv"
    assert cfg.fading == {"w1": 0.7, "w2": 0.3}
    assert cfg.expected_rows == 3 * 2 * 4


def test_phase_plan():
    plan = list(phase_plan(8, 25, 8))
    assert len(plan) == 41
    assert plan[8] == (9, "train", 1) and plan[-1] == (41, "post", 8)


def test_trial_seed_independent_of_group():
    assert trial_seed(1, 2, 3) == trial_seed(1, 2, 3)
    assert trial_seed(1, 2, 3) != trial_seed(1, 2, 4)


def test_autonomy_trial_scores_top(session):
    r = run_trial(session, None, group="full_assist", phase="train", trial=9, level=100.0)
    assert r.termination is Termination.FINISHED
    assert r.S_R >= 99.0


def test_worst_driver_fails(session):
    r = run_trial(session, DriverParams(skill=0.0, seed=0), group="self_learning", phase="pre",
                  trial=1, level=0.0, seed=0)
    assert r.p_l < 1.0 and r.termination is not Termination.FINISHED


def test_trial_is_reproducible(session):
    kw = dict(group="fading", phase="train", trial=12, level=40.0, subject=1)
    a = run_trial(session, session.drivers[1], **kw)
    b = run_trial(session, session.drivers[1], **kw)
    assert a.row() == b.row()


def test_small_protocol(tmp_path, session):
    p = tmp_path / "exp.toml"
    p.write_text(SMALL)
    cfg = load_config(p)
    summary, runs = run_protocol(cfg, session)
    out = tmp_path / "out"
    rows = read_results(out / "results.csv")
    assert len(rows) == cfg.expected_rows == 24
    assert all(r.L == 0.0 for r in rows if r.phase in ("pre", "post"))
    assert all(r.L == 100.0 for r in rows if r.group == "full_assist" and r.phase == "train")
    fading_train = [r.L for r in rows if r.group == "fading" and r.phase == "train"]
    assert fading_train[0] == 100.0 and fading_train[2] == 100.0
    for name in ("summary.json", "training_curves.csv", "paths.csv", "path_distribution.csv",
                 "calibration.json", "fading/subject_00.json", "fading/subject_01.json"):
        assert (out / name).exists(), name
    data = json.loads((out / "summary.json").read_text())
    assert data["synthetic"] is True
    assert set(data["groups"]) == {"self_learning", "full_assist", "fading"}
    first = (out / "results.csv").read_bytes()
    run_protocol(cfg, session)
    assert (out / "results.csv").read_bytes() == first


def test_results_round_trip_and_errors(tmp_path):
    rows = [rec("fading", 0, "post", 34, 91.5, L=0.0), rec("fading", 0, "post", 35, 12.0, "spin")]
    path = tmp_path / "results.csv"
    write_results(path, rows)
    assert path.read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)
    back = read_results(path)
    assert [r.row() for r in back] == [r.row() for r in rows]
    text = path.read_text().splitlines()
    text.append("fading,0,post,36,0.0,1.0,60.0")
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(ValueError, match=":4:"):
        read_results(path)


def test_summary_single_subject_has_zero_group_sd():
    m = group_metrics([rec("g", 0, "post", 1, 80.0), rec("g", 0, "post", 2, 90.0)])
    assert m.sd_within_group == 0.0
    assert m.mean_sd_within_subjects == pytest.approx(np.std([80.0, 90.0], ddof=1))


def test_summary_identical_subjects():
    rows = [rec("g", s, "post", t, v) for s in (0, 1) for t, v in ((1, 70.0), (2, 95.0))]
    assert group_metrics(rows).sd_within_group == 0.0


def test_summary_hand_fixture(tmp_path):
    rows = [rec("fading", 0, "post", 34, 90.0, T=60.0, A=2.0),
            rec("fading", 0, "post", 35, 30.0, "offtrack", T=100.0, A=50.0),
            rec("fading", 1, "post", 34, 60.0, T=64.0, A=0.0)]
    write_results(tmp_path / "results.csv", rows)
    summary = summarize(tmp_path / "results.csv", tmp_path / "plots")
    m = summary.metric("fading", "post")
    assert m.mean_score == pytest.approx((60.0 + 60.0) / 2)
    assert m.sd_within_group == 0.0
    assert m.success_rate == pytest.approx(2 / 3)
    assert m.mean_lap_time == pytest.approx(62.0)
    assert m.mean_area == pytest.approx(1.0)
    assert m.sd_lap_time == pytest.approx(np.std([60.0, 64.0], ddof=1))
    assert (tmp_path / "plots" / "training_curves.csv").exists()
    assert "pre" not in summary.groups["fading"]


def test_path_distribution_bins():
    rows = [("g", 0, 34, 1.0, 0.5), ("g", 0, 34, 4.0, 1.5), ("g", 1, 34, 6.0, -1.0)]
    out = path_distribution(rows, bin_width=5.0)
    assert out[0][:3] == ("g", 2.5, 1.0) and out[0][4] == 2
    assert out[1][1] == 7.5


def test_cli_summarize(tmp_path, capsys):
    write_results(tmp_path / "results.csv", [rec("full_assist", 0, "post", 34, 77.0)])
    assert main(["summarize", str(tmp_path / "results.csv"), "--out", str(tmp_path / "p")]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["groups"]["full_assist"]["post"]["mean_score"] == 77.0


def test_cli_reports_config_errors(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[experiment]\ngroups = []\n")
    assert main(["run", "--config", str(p)]) == 1


def test_cli_autonomy_lap(tmp_path, capsys):
    out = tmp_path / "cal.json"
    assert main(["lap", "--autonomy-only", "--out", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["termination"] == "finished"
    cal = Calibration.from_file(out)
    assert cal.T_mpc == info["T_mpc"]
