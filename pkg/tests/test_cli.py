import numpy as np
import pytest

from gtpslam.cli import PROFILES, _parse_levels, _parse_order, build_parser, main
from gtpslam.core import CovarianceSet, Scenario, save_scenario


@pytest.fixture()
def scenario_file(tmp_path):
    covs = CovarianceSet(
        sigma_f=[1e-4, 1e-4, 4e-6],
        sigma_g=[0.25, 0.01],
        sigma_g_hat=0.0025,
        sigma_h=[1.0, 0.01],
        sigma_h_bar=[4.0, 4.0],
        sigma_b=0.04,
    )
    scn = Scenario(
        num_players=2, horizon=6, dt=0.2, speed=30.0,
        landmarks=[[30.0, -5.0], [60.0, 10.0]],
        lane_targets=[0.0, 3.7],
        initial_states=[[0.0, 0.5, 0.0], [-10.0, 3.5, 0.0]],
        covariances=covs, name="cli-test",
    )
    path = tmp_path / "scn.json"
    save_scenario(scn, path)
    return path


def test_profiles_table():
    assert PROFILES["desk"]["levels"] == (0.1, 0.5, 1.0)
    assert PROFILES["desk"]["trials"] == 10
    assert len(PROFILES["paper"]["levels"]) == 20
    assert PROFILES["paper"]["trials"] == 50


def test_parse_levels():
    assert _parse_levels("0.1,0.5,1.0") == [0.1, 0.5, 1.0]
    with pytest.raises(Exception):
        _parse_levels("0.1,zebra")
    with pytest.raises(Exception):
        _parse_levels("-0.1")
    with pytest.raises(Exception):
        _parse_levels("")


def test_parse_order():
    assert _parse_order("1,0") == [1, 0]
    with pytest.raises(Exception):
        _parse_order("a,b")


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_plan(scenario_file, tmp_path, capsys):
    out = tmp_path / "plan"
    rc = main(["plan", "--scenario", str(scenario_file), "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "converged" in text
    assert (out / "ground_truth.json").exists()


def test_simulate(scenario_file, tmp_path, capsys):
    out = tmp_path / "sim"
    rc = main(["simulate", "--scenario", str(scenario_file), "--sigma", "0.5",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    assert (out / "ground_truth.json").exists()
    assert (out / "measurements.json").exists()
    text = capsys.readouterr().out
    assert "12 landmark" in text          # 6 stages x 2 landmarks
    assert "12 inter-player" in text      # 6 stages x 2 directions


def test_estimate(scenario_file, tmp_path, capsys):
    out = tmp_path / "est"
    rc = main(["estimate", "--scenario", str(scenario_file), "--sigma", "0.5",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "gtpslam:" in text and "ba:" in text
    assert (out / "trace.csv").exists()


def test_estimate_rejects_bad_sigma(scenario_file, capsys):
    rc = main(["estimate", "--scenario", str(scenario_file), "--sigma", "-1"])
    assert rc == 2


def test_sweep_writes_outputs(scenario_file, tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--scenario", str(scenario_file), "--levels", "0.5",
               "--trials", "2", "--seed", "3", "--out", str(out)])
    assert rc == 0
    trials = (out / "trials.csv").read_text().splitlines()
    assert trials[0].startswith("sigma,seed,method,")
    assert len(trials) == 5           # header + 2 trials x 2 methods
    assert (out / "summary.csv").exists()
    assert (out / "timing.csv").exists()
    assert sorted(p.name for p in (out / "trace").iterdir()) == [
        "level0_trial000.csv", "level0_trial001.csv"]


def test_sweep_determinism_across_invocations(scenario_file, tmp_path):
    outs = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        assert main(["sweep", "--scenario", str(scenario_file), "--levels", "0.5,1.0",
                     "--trials", "1", "--seed", "5", "--out", str(out)]) == 0
        outs.append(out)
    assert (outs[0] / "trials.csv").read_bytes() == (outs[1] / "trials.csv").read_bytes()
    assert (outs[0] / "summary.csv").read_bytes() == (outs[1] / "summary.csv").read_bytes()


def test_sweep_zero_trials(scenario_file, tmp_path):
    out = tmp_path / "empty"
    rc = main(["sweep", "--scenario", str(scenario_file), "--levels", "0.5",
               "--trials", "0", "--out", str(out)])
    assert rc == 0
    assert (out / "trials.csv").read_text().splitlines() == [
        "sigma,seed,method,status,vehicle_rmse,landmark_rmse,ibr_rounds"]


def test_sweep_rejects_bad_order(scenario_file, capsys):
    rc = main(["sweep", "--scenario", str(scenario_file), "--levels", "0.5",
               "--trials", "1", "--ibr-order", "0,3"])
    assert rc == 2


def test_sweep_custom_order_runs(scenario_file, tmp_path):
    out = tmp_path / "ord"
    rc = main(["sweep", "--scenario", str(scenario_file), "--levels", "0.5",
               "--trials", "1", "--ibr-order", "1,0", "--out", str(out)])
    assert rc == 0


def test_missing_scenario_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--scenario", str(tmp_path / "nope.json")])
    assert exc.value.code == 2


def test_malformed_scenario_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"num_players": "two"}')
    with pytest.raises(SystemExit) as exc:
        main(["check", "--scenario", str(bad)])
    assert exc.value.code == 2


def test_check_passes_on_good_scenario(scenario_file, capsys):
    rc = main(["check", "--scenario", str(scenario_file)])
    assert rc == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 3
    assert "FAIL" not in text


def test_check_flags_coincident_starts(tmp_path, capsys):
    covs = CovarianceSet(
        sigma_f=[1e-4, 1e-4, 4e-6], sigma_g=[0.25, 0.01], sigma_g_hat=0.0025,
        sigma_h=[1.0, 0.01], sigma_h_bar=[4.0, 4.0], sigma_b=0.04,
    )
    scn = Scenario(
        num_players=2, horizon=4, dt=0.2, speed=30.0,
        landmarks=[[30.0, -5.0]], lane_targets=[0.0, 0.0],
        initial_states=[[0.0, 0.1, 0.0], [0.0, 0.1, 0.0]],
        covariances=covs,
    )
    path = tmp_path / "coincident.json"
    save_scenario(scn, path)
    rc = main(["check", "--scenario", str(path)])
    assert rc == 1
    assert "FAIL" in capsys.readouterr().out
