import json
import os

import numpy as np
import pytest

import panelhmm as ph
from panelhmm.cli import main
from panelhmm.dataio import (PanelFormatError, file_sha256, read_chain_csv,
                             read_panel_csv, read_truth_params_csv,
                             scan_panel_csv, write_chain_csv, write_panel_csv)
from panelhmm.model import parameter_layout
from panelhmm.records import SubjectRecord, Visit
from panelhmm.simulate import scenario_presets, simulate_cohort


@pytest.fixture(scope="module")
def cav_sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("cav")
    assert main(["simulate", "--scenario", "cav-delayed", "--subjects", "120",
                 "--seed", "3", "--out", str(out)]) == 0
    return out


def test_panel_round_trip(tmp_path, cav):
    spec, _, _, _ = cav
    subjects, _ = simulate_cohort(scenario_presets("cav-delayed",
                                                   cohort_size=80, seed=1))
    path = tmp_path / "panel.csv"
    write_panel_csv(subjects, path)
    back = read_panel_csv(path, spec)
    assert back == subjects


def test_mcsa_panel_round_trip(tmp_path, mcsa):
    spec, _, _, _ = mcsa
    subjects, _ = simulate_cohort(scenario_presets("mcsa-synthetic",
                                                   cohort_size=60, seed=2))
    path = tmp_path / "panel.csv"
    write_panel_csv(subjects, path)
    back = read_panel_csv(path, spec)
    assert back == subjects


def test_validate_clean_file(cav_sim):
    assert main(["validate", "--data", str(cav_sim / "data.csv"),
                 "--preset", "cav4"]) == 0


def test_validate_reports_visit_after_death(tmp_path, cav, capsys):
    spec, _, _, _ = cav
    path = tmp_path / "bad.csv"
    path.write_text(
        "subject_id,age,male,educ,apoe4,pib,thickness,mmse,ntests,dem,event,observed_state\n"
        "a,0.0,1,,,,,,,,visit,1\n"
        "a,2.0,1,,,,,,,,death,\n"
        "a,3.0,1,,,,,,,,visit,1\n")
    _, violations = scan_panel_csv(path, spec)
    assert any("after the death row" in v for v in violations)
    assert main(["validate", "--data", str(path), "--preset", "cav4"]) == 1
    out = capsys.readouterr().out
    assert "after the death row" in out


def test_validate_reports_low_pib(tmp_path, mcsa, capsys):
    spec, _, _, _ = mcsa
    path = tmp_path / "bad.csv"
    path.write_text(
        "subject_id,age,male,educ,apoe4,pib,thickness,mmse,ntests,dem,event,observed_state\n"
        "a,55.0,1,0,0,0.8,,,,0,visit,\n")
    _, violations = scan_panel_csv(path, spec)
    assert any("log(pib-1)" in v for v in violations)


def test_validate_reports_unsorted_and_death_responses(tmp_path, mcsa):
    spec, _, _, _ = mcsa
    path = tmp_path / "bad.csv"
    path.write_text(
        "subject_id,age,male,educ,apoe4,pib,thickness,mmse,ntests,dem,event,observed_state\n"
        "a,60.0,1,0,0,,,,,0,visit,\n"
        "a,58.0,1,0,0,,,,,0,visit,\n"
        "b,60.0,1,0,0,,,,,0,visit,\n"
        "b,61.0,1,0,0,1.4,,,,,death,\n")
    _, violations = scan_panel_csv(path, spec)
    assert any("strictly increasing" in v for v in violations)
    assert any("death row" in v and "responses" in v for v in violations)


def test_malformed_row_reports_line_number(tmp_path, mcsa):
    spec, _, _, _ = mcsa
    path = tmp_path / "bad.csv"
    path.write_text(
        "subject_id,age,male,educ,apoe4,pib,thickness,mmse,ntests,dem,event,observed_state\n"
        "a,sixty,1,0,0,,,,,0,visit,\n")
    _, violations = scan_panel_csv(path, spec)
    assert any(v.startswith("line 2:") for v in violations)
    with pytest.raises(PanelFormatError):
        read_panel_csv(path, spec)


def test_truth_files_round_trip(cav_sim, cav):
    spec, layout, _, _ = cav
    truth = read_truth_params_csv(cav_sim / "truth_params.csv")
    assert set(truth) == set(layout.names)
    sc = scenario_presets("cav-delayed")
    for name, val in truth.items():
        assert val == sc.true_params[layout.index(name)]


def test_chain_round_trip(tmp_path, cav):
    spec, layout, priors, constraints = cav
    settings = ph.MCMCSettings(iterations=300, burnin=100, thin=2, seed=9)
    chain = ph.mcmc_run([], spec, priors, constraints, settings, layout)
    path = tmp_path / "chain.csv"
    write_chain_csv(chain, path)
    names, draws, lp = read_chain_csv(path)
    assert names == layout.names
    assert np.array_equal(draws, chain.draws)
    assert np.array_equal(lp, chain.log_posterior)


def test_fit_writes_manifest_and_chains(cav_sim, tmp_path):
    out = tmp_path / "fit"
    rc = main(["fit", "--data", str(cav_sim / "data.csv"), "--preset", "cav4",
               "--iterations", "400", "--burnin", "100", "--thin", "3",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["data_sha256"] == file_sha256(cav_sim / "data.csv")
    assert manifest["settings"]["seed"] == 7
    names, draws, lp = read_chain_csv(out / "chain_00.csv")
    assert draws.shape == ((400 - 100) // 3, 19)
    assert len(lp) == draws.shape[0]


def test_fit_reproducible_byte_for_byte(cav_sim, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        rc = main(["fit", "--data", str(cav_sim / "data.csv"), "--preset", "cav4",
                   "--iterations", "300", "--burnin", "100", "--thin", "2",
                   "--seed", "11", "--out", str(out)])
        assert rc == 0
        outs.append((out / "chain_00.csv").read_bytes())
    assert outs[0] == outs[1]


def test_fit_rejects_empty_data(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("subject_id,age,male,educ,apoe4,pib,thickness,mmse,ntests,"
                    "dem,event,observed_state\n")
    rc = main(["fit", "--data", str(path), "--preset", "cav4",
               "--iterations", "100", "--burnin", "10",
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert not (tmp_path / "out" / "chain_00.csv").exists()


def test_summarize_outputs(cav_sim, tmp_path):
    fit_out = tmp_path / "fit"
    main(["fit", "--data", str(cav_sim / "data.csv"), "--preset", "cav4",
          "--iterations", "400", "--burnin", "100", "--thin", "3",
          "--seed", "7", "--chains", "2", "--out", str(fit_out)])
    summ = tmp_path / "summ"
    rc = main(["summarize", "--chains", str(fit_out / "chain_00.csv"),
               str(fit_out / "chain_01.csv"), "--preset", "cav4",
               "--out", str(summ), "--age", "5"])
    assert rc == 0
    rows = (summ / "summary.csv").read_text().strip().splitlines()
    assert rows[0].split(",")[:3] == ["name", "mean", "sd"]
    assert len(rows) == 20                        # 19 params + header

    # posterior means in the summary equal column means of the pooled draws
    _, d0, _ = read_chain_csv(fit_out / "chain_00.csv")
    _, d1, _ = read_chain_csv(fit_out / "chain_01.csv")
    pooled = np.vstack([d0, d1])
    for line in rows[1:3]:
        cells = line.split(",")
        j = ["q1to2_b0", "q1to2_age"].index(cells[0])
        assert float(cells[1]) == pooled[:, j].mean()

    rates = (summ / "mean_transition_years_age5_male0.csv").read_text()
    assert "1->2" in rates


def test_summarize_layout_mismatch(cav_sim, tmp_path, capsys):
    fit_out = tmp_path / "fit"
    main(["fit", "--data", str(cav_sim / "data.csv"), "--preset", "cav4",
          "--iterations", "200", "--burnin", "50", "--thin", "2",
          "--seed", "1", "--out", str(fit_out)])
    rc = main(["summarize", "--chains", str(fit_out / "chain_00.csv"),
               "--preset", "mcsa7", "--out", str(tmp_path / "s")])
    assert rc == 2
