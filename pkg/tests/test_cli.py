"""Tests for the command-line interface.

Each subcommand runs in-process through ``main`` against temp directories;
artifact contents are checked by independent recomputation with the library,
and the frozen growth tables pin the exported numbers. A couple of
subprocess runs cover the module entry point and real exit codes.
"""

from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from ergodic_choice import __version__
from ergodic_choice.cli import (
    DEFAULT_PORT,
    UsageError,
    build_parser,
    main,
    parse_agents,
    resolve_server_settings,
)
from ergodic_choice.design import SCHEDULE_LENGTH
from ergodic_choice.dynamics import Dynamic
from ergodic_choice.records import group_datasets, read_jsonl, validate_dataset
from ergodic_choice.stats import choice_proportions, session_growth_rate
from ergodic_choice.utility import Isoelastic, ProspectTheory, TimeOptimal

from .frozen_values import (
    ADDITIVE_GROWTH_TABLE,
    GROWTH_TOL,
    MULTIPLICATIVE_GROWTH_TABLE,
)


def read_csv(path: Path) -> tuple[dict, list[dict]]:
    """Parse a CSV artifact into (provenance, rows)."""
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# provenance ")
    provenance = json.loads(lines[0][len("# provenance "):])
    rows = list(csv.DictReader(lines[1:]))
    return provenance, rows


class TestParseAgents:
    def test_canonical_roster(self):
        agents = parse_agents("timeoptimal,iso:0,iso:1,pt:0.5,0.5,2")
        assert [a.name for a in agents] == [
            "timeoptimal",
            "iso_0",
            "iso_1",
            "pt_0.5_0.5_2",
        ]
        assert isinstance(agents[0].additive.model, TimeOptimal)
        assert agents[1].additive.model == Isoelastic(0.0)
        assert agents[2].multiplicative.model == Isoelastic(1.0)
        assert agents[3].additive.model == ProspectTheory(0.5, 0.5, 2.0)

    def test_prospect_theory_consumes_three_values(self):
        agents = parse_agents("pt:0.3,0.6,1.5,iso:0.5")
        assert len(agents) == 2
        assert agents[0].additive.model == ProspectTheory(0.3, 0.6, 1.5)
        assert agents[1].additive.model == Isoelastic(0.5)

    def test_beta_applies_to_both_conditions(self):
        (agent,) = parse_agents("iso:0.7", beta=3.5)
        assert agent.additive.beta == 3.5
        assert agent.multiplicative.beta == 3.5

    def test_negative_eta_is_accepted(self):
        (agent,) = parse_agents("iso:-0.5")
        assert agent.additive.model == Isoelastic(-0.5)

    @pytest.mark.parametrize(
        "spec",
        ["", "wizard", "iso:abc", "pt:0.5,0.5", "pt:0.5", "iso:1,iso:1"],
    )
    def test_bad_specs_raise_usage_errors(self, spec):
        with pytest.raises(UsageError):
            parse_agents(spec)


class TestDesignCommand:
    def test_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "design"
        assert main(["design", "--out", str(out), "--seed", "3"]) == 0
        for dynamic in ("additive", "multiplicative"):
            for name in ("stimuli.csv", "gambles.csv", "schedule.csv", "passive.csv"):
                assert (out / dynamic / name).exists()
        assert (out / "provenance.json").exists()

    def test_gamble_table_matches_the_frozen_growth_values(self, tmp_path):
        out = tmp_path / "design"
        main(["design", "--out", str(out)])
        for dynamic, table in (
            ("additive", ADDITIVE_GROWTH_TABLE),
            ("multiplicative", MULTIPLICATIVE_GROWTH_TABLE),
        ):
            _, rows = read_csv(out / dynamic / "gambles.csv")
            assert len(rows) == 36
            for row in rows:
                key = (int(row["first"]), int(row["second"]))
                assert float(row["growth_rate"]) == pytest.approx(
                    table[key], abs=GROWTH_TOL
                )

    def test_schedule_and_passive_have_canonical_lengths(self, tmp_path):
        out = tmp_path / "design"
        main(["design", "--out", str(out), "--dynamic", "multiplicative"])
        _, schedule = read_csv(out / "multiplicative" / "schedule.csv")
        assert len(schedule) == SCHEDULE_LENGTH
        _, passive = read_csv(out / "multiplicative" / "passive.csv")
        assert len(passive) == 334

    def test_single_dynamic_writes_only_that_condition(self, tmp_path):
        out = tmp_path / "design"
        main(["design", "--out", str(out), "--dynamic", "additive"])
        assert (out / "additive").exists()
        assert not (out / "multiplicative").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        out = tmp_path / "design"
        main(["design", "--out", str(out), "--seed", "5"])
        files = sorted(p for p in out.rglob("*") if p.is_file())
        before = {p: p.read_bytes() for p in files}
        main(["design", "--out", str(out), "--seed", "5"])
        for p, content in before.items():
            assert p.read_bytes() == content

    def test_unknown_dynamic_exits_2(self, tmp_path):
        assert main(["design", "--out", str(tmp_path), "--dynamic", "bogus"]) == 2


class TestProvenance:
    def test_every_artifact_carries_seeds_version_and_hash(self, tmp_path):
        out = tmp_path / "design"
        main(["design", "--out", str(out), "--seed", "9"])
        provenance, _ = read_csv(out / "additive" / "stimuli.csv")
        assert provenance["tool"] == "ergodic-choice"
        assert provenance["version"] == __version__
        assert provenance["command"] == "design"
        assert provenance["seeds"]["additive"]["schedule"] == 9
        assert len(provenance["config_hash"]) == 16

    def test_hash_is_stable_for_identical_settings(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["design", "--out", str(out_a), "--seed", "4"])
        main(["design", "--out", str(out_b), "--seed", "4"])
        hash_a = read_csv(out_a / "additive" / "stimuli.csv")[0]["config_hash"]
        hash_b = read_csv(out_b / "additive" / "stimuli.csv")[0]["config_hash"]
        # the hash covers the resolved settings, which include --out
        assert hash_a != hash_b
        main(["design", "--out", str(out_a), "--seed", "4"])
        assert read_csv(out_a / "additive" / "stimuli.csv")[0]["config_hash"] == hash_a

    def test_hash_changes_with_the_seed(self, tmp_path):
        out = tmp_path / "design"
        main(["design", "--out", str(out), "--seed", "1"])
        first = read_csv(out / "additive" / "stimuli.csv")[0]["config_hash"]
        main(["design", "--out", str(out), "--seed", "2"])
        second = read_csv(out / "additive" / "stimuli.csv")[0]["config_hash"]
        assert first != second


class TestConfigFile:
    def test_config_entries_override_flags(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"seed": 7}))
        out = tmp_path / "design"
        assert (
            main(
                ["design", "--out", str(out), "--seed", "1", "--config", str(config)]
            )
            == 0
        )
        provenance, _ = read_csv(out / "additive" / "stimuli.csv")
        assert provenance["settings"]["seed"] == 7
        assert provenance["seeds"]["additive"]["schedule"] == 7

    def test_dashed_config_keys_map_to_flags(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"schedule-seed": 5, "horizon-trials": 40}))
        out = tmp_path / "sim"
        rc = main(
            [
                "simulate",
                "--agents",
                "iso:0.5",
                "--out",
                str(out),
                "--config",
                str(config),
            ]
        )
        assert rc == 0
        assert (out / "trajectories_additive.csv").exists()

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"not_a_flag": 1}))
        rc = main(["design", "--out", str(tmp_path / "d"), "--config", str(config)])
        assert rc == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, tmp_path):
        rc = main(
            ["design", "--out", str(tmp_path / "d"), "--config", str(tmp_path / "no.json")]
        )
        assert rc == 2

    def test_malformed_config_exits_2(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text("{broken")
        assert main(["design", "--out", str(tmp_path / "d"), "--config", str(config)]) == 2
        config.write_text("[1, 2]")
        assert main(["design", "--out", str(tmp_path / "d"), "--config", str(config)]) == 2


class TestSimulateCommand:
    def test_session_mode_writes_validated_trials(self, tmp_path):
        out = tmp_path / "sim"
        rc = main(
            ["simulate", "--agents", "timeoptimal,iso:0.5", "--out", str(out), "--seed", "5"]
        )
        assert rc == 0
        parsed = read_jsonl(out / "trials.jsonl")
        assert len(parsed.trials) == 2 * 2 * SCHEDULE_LENGTH
        assert validate_dataset(parsed.trials).ok
        datasets = group_datasets(parsed.trials)
        assert {d.subject for d in datasets} == {"timeoptimal", "iso_0.5"}
        assert {d.condition for d in datasets} == {
            Dynamic.ADDITIVE,
            Dynamic.MULTIPLICATIVE,
        }

    def test_session_mode_is_seed_reproducible(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            main(["simulate", "--agents", "iso:0.8", "--out", str(out), "--seed", "3"])
        trials_a = (out_a / "trials.jsonl").read_text().splitlines()[1:]
        trials_b = (out_b / "trials.jsonl").read_text().splitlines()[1:]
        assert trials_a == trials_b

    def test_trajectory_mode_writes_paths_and_growth(self, tmp_path):
        out = tmp_path / "traj"
        rc = main(
            [
                "simulate",
                "--agents",
                "timeoptimal,iso:0,iso:1",
                "--horizon-trials",
                "200",
                "--dynamic",
                "multiplicative",
                "--out",
                str(out),
                "--seed",
                "6",
            ]
        )
        assert rc == 0
        _, rows = read_csv(out / "trajectories_multiplicative.csv")
        assert len(rows) == 201  # horizon plus the starting wealth
        assert set(rows[0]) == {
            "time_s",
            "wealth_iso_0",
            "wealth_iso_1",
            "wealth_timeoptimal",
        }
        assert float(rows[0]["wealth_timeoptimal"]) == 1000.0
        growth = json.loads((out / "growth.json").read_text())
        comparison = growth["comparison"]["multiplicative"]
        assert comparison["reference"] == "timeoptimal"
        assert set(comparison["growth_per_trial"]) == {
            "timeoptimal",
            "iso_0",
            "iso_1",
        }

    def test_both_horizon_flags_exit_2(self, tmp_path):
        rc = main(
            [
                "simulate",
                "--agents",
                "iso:1",
                "--horizon-week",
                "--horizon-trials",
                "10",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert rc == 2

    def test_unknown_reference_exits_2(self, tmp_path):
        rc = main(
            [
                "simulate",
                "--agents",
                "iso:1",
                "--horizon-trials",
                "10",
                "--reference",
                "ghost",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert rc == 2


@pytest.fixture(scope="module")
def small_cohort(tmp_path_factory):
    """A simulated three-subject cohort in both conditions, plus its fit."""
    root = tmp_path_factory.mktemp("cohort")
    sim = root / "sim"
    rc = main(
        [
            "simulate",
            "--agents",
            "iso:0.3,iso:0.7,iso:1.1",
            "--beta",
            "4",
            "--out",
            str(sim),
            "--seed",
            "9",
        ]
    )
    assert rc == 0
    inf = root / "infer"
    rc = main(
        [
            "infer",
            "--data",
            str(sim / "trials.jsonl"),
            "--chains",
            "2",
            "--samples",
            "400",
            "--burnin",
            "150",
            "--seed",
            "2",
            "--out",
            str(inf),
        ]
    )
    assert rc == 0
    return sim, inf


class TestInferCommand:
    def test_report_covers_both_conditions(self, small_cohort):
        _, inf = small_cohort
        report = json.loads((inf / "report.json").read_text())
        assert set(report["conditions"]) == {"additive", "multiplicative"}
        for payload in report["conditions"].values():
            assert set(payload["population_map"]) == {
                "mu_eta",
                "sigma_eta",
                "mu_beta",
                "sigma_beta",
            }
            assert set(payload["subject_eta_map"]) == {"iso_0.3", "iso_0.7", "iso_1.1"}
            assert set(payload["rhats"]) == {
                "mu_eta",
                "sigma_eta",
                "mu_beta",
                "sigma_beta",
            }

    def test_estimates_csv_matches_the_report(self, small_cohort):
        _, inf = small_cohort
        report = json.loads((inf / "report.json").read_text())
        _, rows = read_csv(inf / "estimates.csv")
        assert len(rows) == 6
        for row in rows:
            payload = report["conditions"][row["condition"]]
            assert float(row["eta_map"]) == payload["subject_eta_map"][row["subject"]]
            lo, hi = payload["subject_eta_ci"][row["subject"]]
            assert float(row["eta_lo"]) == lo
            assert float(row["eta_hi"]) == hi

    def test_dump_chains_writes_per_condition_draws(self, small_cohort, tmp_path):
        sim, _ = small_cohort
        out = tmp_path / "dump"
        rc = main(
            [
                "infer",
                "--data",
                str(sim / "trials.jsonl"),
                "--chains",
                "2",
                "--samples",
                "120",
                "--burnin",
                "40",
                "--dump-chains",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        assert any((out / "chains_additive").iterdir())
        assert any((out / "chains_multiplicative").iterdir())

    def test_missing_data_file_exits_2(self, tmp_path):
        rc = main(
            ["infer", "--data", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "o")]
        )
        assert rc == 2


class TestSelectCommand:
    def test_reports_model_posteriors_and_heatmap(self, small_cohort, tmp_path):
        sim, _ = small_cohort
        out = tmp_path / "select"
        rc = main(
            [
                "select",
                "--data",
                str(sim / "trials.jsonl"),
                "--chains",
                "2",
                "--samples",
                "150",
                "--burnin",
                "60",
                "--draws",
                "20000",
                "--seed",
                "2",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["model_names"] == [
            "time_optimal",
            "isoelastic",
            "prospect_theory",
        ]
        assert set(report["modal_model"]) == {"iso_0.3", "iso_0.7", "iso_1.1"}
        pxp = report["protected_exceedance"]
        assert len(pxp) == 3
        assert sum(pxp) == pytest.approx(1.0, abs=1e-9)
        assert 0.0 <= report["bayesian_omnibus_risk"] <= 1.0
        _, rows = read_csv(out / "heatmap.csv")
        assert len(rows) == 3
        for row in rows:
            total = sum(float(row[m]) for m in report["model_names"])
            assert total == pytest.approx(1.0, abs=1e-9)


class TestAnalyzeCommand:
    def test_choice_proportions_match_direct_recomputation(self, small_cohort, tmp_path):
        sim, _ = small_cohort
        out = tmp_path / "an"
        assert main(["analyze", "--data", str(sim / "trials.jsonl"), "--out", str(out)]) == 0
        datasets = group_datasets(read_jsonl(sim / "trials.jsonl").trials)
        expected = {
            (p.subject, p.condition.value): p for p in choice_proportions(datasets)
        }
        _, rows = read_csv(out / "choice_proportions.csv")
        assert len(rows) == len(expected)
        for row in rows:
            p = expected[(row["subject"], row["condition"])]
            assert float(row["cp_log"]) == p.cp_log
            assert int(row["n_discrepant"]) == p.n_discrepant

    def test_growth_rates_match_direct_recomputation(self, small_cohort, tmp_path):
        sim, _ = small_cohort
        out = tmp_path / "an"
        main(["analyze", "--data", str(sim / "trials.jsonl"), "--out", str(out)])
        datasets = group_datasets(read_jsonl(sim / "trials.jsonl").trials)
        expected = {
            (d.subject, d.condition.value): session_growth_rate(d) for d in datasets
        }
        _, rows = read_csv(out / "growth_rates.csv")
        for row in rows:
            assert float(row["growth_rate"]) == expected[(row["subject"], row["condition"])]

    def test_eta_report_enables_distances_and_correlations(self, small_cohort, tmp_path):
        sim, inf = small_cohort
        out = tmp_path / "an"
        rc = main(
            [
                "analyze",
                "--data",
                str(sim / "trials.jsonl"),
                "--etas",
                str(inf / "report.json"),
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        payload = json.loads((out / "analysis.json").read_text())
        assert payload["model_distances"]["n"] == 3
        assert set(payload["growth_vs_deviation"]) == {"additive", "multiplicative"}
        _, rows = read_csv(out / "distances.csv")
        assert len(rows) == 3
        report = json.loads((inf / "report.json").read_text())
        for row in rows:
            eta_add = report["conditions"]["additive"]["subject_eta_map"][row["subject"]]
            eta_mult = report["conditions"]["multiplicative"]["subject_eta_map"][
                row["subject"]
            ]
            assert float(row["eta_shift"]) == pytest.approx(eta_mult - eta_add)

    def test_bad_etas_file_exits_2(self, small_cohort, tmp_path):
        sim, _ = small_cohort
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"something": 1}))
        rc = main(
            [
                "analyze",
                "--data",
                str(sim / "trials.jsonl"),
                "--etas",
                str(bad),
                "--out",
                str(tmp_path / "o"),
            ]
        )
        assert rc == 2


class TestRecoverCommand:
    def test_single_cell_recovery_reports_both_conditions(self, tmp_path):
        out = tmp_path / "rec"
        rc = main(
            [
                "recover",
                "--grid-eta",
                "0.5",
                "--subjects-per-cell",
                "2",
                "--chains",
                "2",
                "--samples",
                "250",
                "--burnin",
                "100",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        _, rows = read_csv(out / "recovery.csv")
        assert len(rows) == 2
        assert {row["condition"] for row in rows} == {"additive", "multiplicative"}
        for row in rows:
            assert float(row["true_eta"]) == 0.5
            assert float(row["abs_error"]) == pytest.approx(
                abs(float(row["population_map_eta"]) - 0.5)
            )
        report = json.loads((out / "report.json").read_text())
        assert report["n_cells"] == 1

    def test_negative_grid_values_parse_from_the_command_line(self, tmp_path):
        parser = build_parser()
        from ergodic_choice.cli import _join_list_flag_values

        argv = _join_list_flag_values(
            ["recover", "--grid-eta", "-0.5,0,0.5,1,1.5", "--out", str(tmp_path)]
        )
        args = parser.parse_args(argv)
        assert args.grid_eta == "-0.5,0,0.5,1,1.5"

    def test_empty_grid_exits_2(self, tmp_path):
        rc = main(["recover", "--grid-eta", ",", "--out", str(tmp_path / "r")])
        assert rc == 2


class TestExportCommand:
    def test_growth_tables_match_the_frozen_values(self, tmp_path):
        out = tmp_path / "exp"
        assert main(["export", "--out", str(out)]) == 0
        _, rows = read_csv(out / "growth_tables.csv")
        assert len(rows) == 72
        tables = {
            "additive": ADDITIVE_GROWTH_TABLE,
            "multiplicative": MULTIPLICATIVE_GROWTH_TABLE,
        }
        for row in rows:
            key = (int(row["first"]), int(row["second"]))
            assert float(row["growth_rate"]) == pytest.approx(
                tables[row["condition"]][key], abs=GROWTH_TOL
            )

    def test_eta_scatter_uses_the_estimation_report(self, small_cohort, tmp_path):
        _, inf = small_cohort
        out = tmp_path / "exp"
        rc = main(["export", "--etas", str(inf / "report.json"), "--out", str(out)])
        assert rc == 0
        _, rows = read_csv(out / "eta_scatter.csv")
        assert len(rows) == 3
        for row in rows:
            d_time = (
                float(row["eta_add"]) ** 2 + (float(row["eta_mult"]) - 1.0) ** 2
            ) ** 0.5
            assert float(row["d_time"]) == pytest.approx(d_time, rel=1e-12)


class TestServeSettings:
    def _args(self, port=None, data=None):
        parser = build_parser()
        argv = ["serve"]
        if port is not None:
            argv += ["--port", str(port)]
        if data is not None:
            argv += ["--data", data]
        return parser.parse_args(argv)

    def test_flags_beat_environment(self):
        args = self._args(port=9001, data="flagdir")
        port, data = resolve_server_settings(
            args, env={"ERGODIC_CHOICE_PORT": "7000", "ERGODIC_CHOICE_DATA": "envdir"}
        )
        assert (port, data) == (9001, "flagdir")

    def test_environment_beats_defaults(self):
        args = self._args()
        port, data = resolve_server_settings(
            args, env={"ERGODIC_CHOICE_PORT": "7000", "ERGODIC_CHOICE_DATA": "envdir"}
        )
        assert (port, data) == (7000, "envdir")

    def test_defaults_apply_with_an_empty_environment(self):
        port, data = resolve_server_settings(self._args(), env={})
        assert port == DEFAULT_PORT
        assert data

    def test_non_numeric_port_env_raises(self):
        with pytest.raises(UsageError):
            resolve_server_settings(self._args(), env={"ERGODIC_CHOICE_PORT": "abc"})


class TestExitCodes:
    def test_no_arguments_exits_2(self):
        assert main([]) == 2

    def test_unknown_subcommand_exits_2(self):
        assert main(["transmogrify"]) == 2

    def test_missing_required_flag_exits_2(self):
        assert main(["design"]) == 2

    def test_version_flag_exits_0(self):
        assert main(["--version"]) == 0

    def test_help_exits_0(self):
        assert main(["--help"]) == 0
        assert main(["serve", "--help"]) == 0

    def test_module_entry_point_runs_in_a_subprocess(self, tmp_path):
        result = subprocess.run(
            [
                sys.executable,
                "-m",
                "ergodic_choice.cli",
                "design",
                "--out",
                str(tmp_path / "d"),
                "--dynamic",
                "additive",
            ],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0
        assert "design: wrote assets" in result.stdout

    def test_subprocess_usage_error_exits_2(self):
        result = subprocess.run(
            [sys.executable, "-m", "ergodic_choice.cli", "infer", "--data", "/nope.jsonl",
             "--out", "/tmp/never"],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 2
        assert "error:" in result.stderr
