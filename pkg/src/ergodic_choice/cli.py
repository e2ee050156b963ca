"""Command-line interface: one subcommand per pipeline stage.

Subcommands: ``design`` (experiment assets), ``simulate`` (synthetic choice
sessions or long-run wealth trajectories), ``infer`` (hierarchical risk-
aversion estimation), ``select`` (latent-mixture model comparison),
``analyze`` (model-free statistics), ``recover`` (parameter-recovery grid),
``serve`` (the HTTP session server), and ``export`` (figure-ready CSV
tables).

Settings resolve in three layers: built-in defaults, then command-line
flags, then entries from a JSON file passed with ``--config`` — the config
file wins over flags. Every run writes its artifacts together with a
provenance record carrying the tool version, the resolved settings, a hash
of those settings, and every seed in play. The process exits 0 only when the
whole run succeeded; usage and config errors exit 2, runtime failures 1.

Only the ``serve`` subcommand reads the environment, and only for
``ERGODIC_CHOICE_PORT`` and ``ERGODIC_CHOICE_DATA``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from . import __version__
from .agents import (
    AgentConfig,
    compare_growth,
    simulate_choices,
    simulate_cohort_trajectories,
    WEEK_TRIALS,
)
from .design import (
    INITIAL_WEALTH,
    build_gamble_space,
    build_stimulus_set,
    generate_passive_sequence,
    make_schedule,
)
from .dynamics import Dynamic, gamble_growth_rate, Gamble
from .mcmc import (
    SamplerConfig,
    dump_chains,
    fit_cohort,
    selection_config,
    summarize,
)
from .mixture import compare_models, heatmap_rows, run_latent_mixture
from .records import (
    SubjectDataset,
    canonical_json,
    group_datasets,
    read_jsonl,
    validate_dataset,
    write_jsonl,
)
from .stats import (
    choice_proportions,
    distance_to_models,
    growth_vs_deviation,
    jzs_bf_paired,
    jzs_bf_ttest,
    kendall_tau,
    proportion_table,
    session_growth_rate,
    wilcoxon_signed_rank,
)
from .utility import Isoelastic, ProspectTheory, TimeOptimal, utility_difference

DEFAULT_BETA = 1000.0
DEFAULT_PORT = 8766
DEFAULT_DATA_DIR = "ergodic-choice-data"


class UsageError(Exception):
    """A problem with flags, config entries, or input files (exit code 2)."""


# ---------------------------------------------------------------------------
# settings resolution and provenance


def _apply_config(args: argparse.Namespace) -> None:
    """Overlay --config JSON entries onto parsed flags (config wins)."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(entries, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    valid = {
        action.dest
        for action in args._parser._actions
        if action.dest not in ("help", "config")
    }
    for key, value in entries.items():
        dest = key.replace("-", "_")
        if dest not in valid:
            raise UsageError(f"unknown config key {key!r} for '{args.command}'")
        setattr(args, dest, value)


def _settings_dict(args: argparse.Namespace) -> dict[str, Any]:
    skip = {"func", "config", "command"}
    return {
        k: v
        for k, v in sorted(vars(args).items())
        if not k.startswith("_") and k not in skip
    }


def _provenance(args: argparse.Namespace, seeds: dict[str, Any]) -> dict[str, Any]:
    settings = _settings_dict(args)
    digest = hashlib.sha256(canonical_json(settings).encode()).hexdigest()[:16]
    return {
        "tool": "ergodic-choice",
        "version": __version__,
        "command": args.command,
        "settings": settings,
        "config_hash": digest,
        "seeds": seeds,
    }


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    provenance: dict[str, Any],
) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# provenance " + canonical_json(provenance) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_report(path: Path, payload: dict[str, Any], provenance: dict[str, Any]) -> None:
    body = {"provenance": provenance, **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _load_trials(path_str: str):
    path = Path(path_str)
    if not path.exists():
        raise UsageError(f"data file not found: {path}")
    parsed = read_jsonl(path)
    datasets = group_datasets(parsed.trials)
    if not datasets:
        raise UsageError(f"no trial records in {path}")
    return parsed, datasets


def _parse_dynamics(value: str) -> list[Dynamic]:
    if value == "both":
        return [Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE]
    try:
        return [Dynamic(value)]
    except ValueError:
        raise UsageError(
            f"unknown dynamic {value!r}; use additive, multiplicative, or both"
        )


def _float_list(value: Any, flag: str) -> list[float]:
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [x for x in str(value).split(",") if x.strip()]
    try:
        return [float(x) for x in items]
    except (TypeError, ValueError):
        raise UsageError(f"{flag} needs a comma-separated list of numbers, got {value!r}")


def _child_seed(*path: int) -> int:
    return int(np.random.SeedSequence(list(path)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# agent specs


def parse_agents(
    spec: str, beta: float = DEFAULT_BETA, wealth: float = 1000.0
) -> list[AgentConfig]:
    """Parse an agent roster like ``timeoptimal,iso:0,iso:1,pt:0.5,0.5,2``.

    ``timeoptimal`` is the dynamic-appropriate growth maximizer, ``iso:<eta>``
    a fixed isoelastic agent, and ``pt:<alpha_gain>,<alpha_loss>,<loss_aversion>``
    a prospect-theory agent (the two values after the ``pt:`` token are its
    remaining parameters). All agents share the given choice noise ``beta``.
    """
    tokens = [t.strip() for t in str(spec).split(",")]
    tokens = [t for t in tokens if t]
    if not tokens:
        raise UsageError("empty agent spec")
    agents: list[AgentConfig] = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if token == "timeoptimal":
            model: Any = TimeOptimal()
            name = "timeoptimal"
            i += 1
        elif token.startswith("iso:"):
            try:
                eta = float(token[4:])
            except ValueError:
                raise UsageError(f"bad isoelastic agent spec {token!r}")
            model = Isoelastic(eta)
            name = f"iso_{token[4:]}"
            i += 1
        elif token.startswith("pt:"):
            if i + 2 >= len(tokens):
                raise UsageError(
                    "prospect-theory agents need three values: "
                    "pt:<alpha_gain>,<alpha_loss>,<loss_aversion>"
                )
            try:
                params = (float(token[3:]), float(tokens[i + 1]), float(tokens[i + 2]))
            except ValueError:
                raise UsageError(
                    f"bad prospect-theory agent spec {token!r},{tokens[i+1]!r},{tokens[i+2]!r}"
                )
            model = ProspectTheory(*params)
            name = f"pt_{token[3:]}_{tokens[i+1]}_{tokens[i+2]}"
            i += 3
        else:
            raise UsageError(f"unrecognized agent spec {token!r}")
        agents.append(AgentConfig.uniform(name, model, beta=beta, wealth=wealth))
    names = [a.name for a in agents]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise UsageError(f"duplicate agent names {dupes}; vary the parameters")
    return agents


# ---------------------------------------------------------------------------
# design


def cmd_design(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    conditions = _parse_dynamics(args.dynamic)
    seeds = {
        d.value: {"space": args.seed, "schedule": args.seed, "passive": args.seed}
        for d in conditions
    }
    provenance = _provenance(args, seeds)
    for dynamic in conditions:
        sub = out / dynamic.value
        sub.mkdir(parents=True, exist_ok=True)
        stimuli = build_stimulus_set(dynamic)
        space = build_gamble_space(stimuli, seed=args.seed)
        schedule = make_schedule(space, seed=args.seed)
        passive = generate_passive_sequence(stimuli, seed=args.seed)

        _write_csv(
            sub / "stimuli.csv",
            ["id", "value"],
            [(o.id, o.value) for o in stimuli.outcomes],
            provenance,
        )
        pairs = itertools.combinations(stimuli.outcomes, 2)
        _write_csv(
            sub / "gambles.csv",
            ["first", "second", "growth_rate"],
            [
                (a.id, b.id, gamble_growth_rate(Gamble((a, b))))
                for a, b in pairs
            ],
            provenance,
        )
        _write_csv(
            sub / "schedule.csv",
            ["index", "left_1", "left_2", "right_1", "right_2", "kind"],
            [
                (
                    i,
                    pair.left.outcomes[0].id,
                    pair.left.outcomes[1].id,
                    pair.right.outcomes[0].id,
                    pair.right.outcomes[1].id,
                    pair.kind.value,
                )
                for i, pair in enumerate(schedule.trials)
            ],
            provenance,
        )
        wealth_path = passive.wealth_path(stimuli)
        _write_csv(
            sub / "passive.csv",
            ["position", "stimulus", "wealth_after"],
            [
                (i, sid, float(wealth_path[i]))
                for i, sid in enumerate(passive.stimulus_ids)
            ],
            provenance,
        )
    _write_report(out / "provenance.json", {}, provenance)
    print(
        f"design: wrote assets for {', '.join(d.value for d in conditions)} under {out}"
    )


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    conditions = _parse_dynamics(args.dynamic)
    agents = parse_agents(args.agents, beta=args.beta)
    if args.horizon_week and args.horizon_trials is not None:
        raise UsageError("give either --horizon-week or --horizon-trials, not both")

    if args.horizon_week or args.horizon_trials is not None:
        horizon = WEEK_TRIALS if args.horizon_week else int(args.horizon_trials)
        if horizon <= 0:
            raise UsageError("--horizon-trials must be positive")
        seeds = {"trajectory": args.seed, "space": args.schedule_seed}
        provenance = _provenance(args, seeds)
        comparison_payload: dict[str, Any] = {}
        for dynamic in conditions:
            paths = simulate_cohort_trajectories(
                agents, dynamic, horizon_trials=horizon, seed=args.seed
            )
            names = sorted(paths)
            times = paths[names[0]].times_s
            _write_csv(
                out / f"trajectories_{dynamic.value}.csv",
                ["time_s"] + [f"wealth_{n}" for n in names],
                (
                    (float(times[i]), *(float(paths[n].wealth[i]) for n in names))
                    for i in range(len(times))
                ),
                provenance,
            )
            reference = args.reference
            if reference is None:
                reference = "timeoptimal" if "timeoptimal" in paths else names[0]
            if reference not in paths:
                raise UsageError(f"reference agent {reference!r} is not in the roster")
            comparison = compare_growth(paths, reference=reference)
            comparison_payload[dynamic.value] = {
                "reference": comparison.reference,
                "growth_per_trial": comparison.growth,
                "beaten_by": list(comparison.beaten_by),
                "reference_is_best": comparison.reference_is_best,
            }
        _write_report(out / "growth.json", {"comparison": comparison_payload}, provenance)
        print(
            f"simulate: wrote {horizon}-trial trajectories for {len(agents)} agents under {out}"
        )
        return

    seeds: dict[str, Any] = {"choices": {}, "space": args.schedule_seed}
    all_records = []
    for di, dynamic in enumerate(conditions):
        stimuli = build_stimulus_set(dynamic)
        space = build_gamble_space(stimuli, seed=args.schedule_seed)
        schedule = make_schedule(space, seed=args.schedule_seed)
        for ai, agent in enumerate(agents):
            seed = _child_seed(args.seed, di, ai)
            seeds["choices"][f"{agent.name}/{dynamic.value}"] = seed
            dataset = simulate_choices(agent, schedule, seed=seed, subject=agent.name)
            all_records.extend(dataset.trials)
    provenance = _provenance(args, seeds)
    path = out / "trials.jsonl"
    write_jsonl(path, trials=all_records, provenance=provenance)
    report = validate_dataset(all_records)
    if not report.ok:
        messages = "; ".join(i.message for i in report.issues[:3])
        raise RuntimeError(f"simulated records failed validation: {messages}")
    print(
        f"simulate: wrote {len(all_records)} trials "
        f"({len(agents)} agents x {len(conditions)} conditions) to {path}"
    )


# ---------------------------------------------------------------------------
# infer


def _sampler_config(args: argparse.Namespace) -> SamplerConfig:
    return SamplerConfig(
        chains=args.chains,
        samples_per_chain=args.samples,
        burn_in=args.burnin,
        seed=args.seed,
    )


def _summary_payload(summary) -> dict[str, Any]:
    return {
        "population_map": summary.population_map,
        "population_ci": {k: list(v) for k, v in summary.population_ci.items()},
        "subject_eta_map": summary.subject_eta_map,
        "subject_eta_ci": {k: list(v) for k, v in summary.subject_eta_ci.items()},
        "rhats": summary.rhats,
        "acceptance": summary.acceptance,
    }


def cmd_infer(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    _, datasets = _load_trials(args.data)
    config = _sampler_config(args)
    provenance = _provenance(args, {"sampler": args.seed})
    fits = fit_cohort(datasets, config)
    conditions: dict[str, Any] = {}
    rows = []
    for dynamic in sorted(fits, key=lambda d: d.value):
        summary = summarize(fits[dynamic])
        conditions[dynamic.value] = _summary_payload(summary)
        for subject in sorted(summary.subject_eta_map):
            lo, hi = summary.subject_eta_ci[subject]
            rows.append(
                (dynamic.value, subject, summary.subject_eta_map[subject], lo, hi)
            )
        if args.dump_chains:
            dump_chains(fits[dynamic], out / f"chains_{dynamic.value}")
    _write_report(out / "report.json", {"conditions": conditions}, provenance)
    _write_csv(
        out / "estimates.csv",
        ["condition", "subject", "eta_map", "eta_lo", "eta_hi"],
        rows,
        provenance,
    )
    worst = max(
        (max(c["rhats"].values()) for c in conditions.values()), default=math.nan
    )
    print(
        f"infer: fitted {len(datasets)} datasets across "
        f"{len(conditions)} conditions (worst split R-hat {worst:.4f}); "
        f"report under {out}"
    )


# ---------------------------------------------------------------------------
# select


def cmd_select(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    _, datasets = _load_trials(args.data)
    overrides: dict[str, Any] = {"seed": args.seed}
    if args.chains is not None:
        overrides["chains"] = args.chains
    if args.samples is not None:
        overrides["samples_per_chain"] = args.samples
    if args.burnin is not None:
        overrides["burn_in"] = args.burnin
    config = selection_config(**overrides)
    provenance = _provenance(args, {"sampler": args.seed, "frequency_draws": args.seed})
    result = run_latent_mixture(datasets, config=config)
    comparison = compare_models(result.subject_probs, n_draws=args.draws, seed=args.seed)
    payload = {
        "model_names": list(result.model_names),
        "subjects": list(result.subjects),
        "modal_model": {s: result.modal_model(s) for s in result.subjects},
        "frequencies": [float(x) for x in comparison.frequencies],
        "frequency_sd": [float(x) for x in comparison.frequency_sd],
        "exceedance": [float(x) for x in comparison.exceedance],
        "protected_exceedance": [float(x) for x in comparison.pxp],
        "bayesian_omnibus_risk": float(comparison.bor),
    }
    _write_report(out / "report.json", payload, provenance)
    rows = heatmap_rows(result)
    _write_csv(
        out / "heatmap.csv",
        ["subject"] + list(result.model_names),
        [[r["subject"]] + [r[m] for m in result.model_names] for r in rows],
        provenance,
    )
    best = result.model_names[int(np.argmax(comparison.pxp))]
    print(
        f"select: {len(result.subjects)} subjects; best model {best} "
        f"(PXP {max(payload['protected_exceedance']):.3f}); report under {out}"
    )


# ---------------------------------------------------------------------------
# analyze


def _etas_by_condition(path_str: str) -> dict[Dynamic, dict[str, float]]:
    path = Path(path_str)
    if not path.exists():
        raise UsageError(f"estimates file not found: {path}")
    report = json.loads(path.read_text())
    conditions = report.get("conditions")
    if not isinstance(conditions, dict):
        raise UsageError(f"{path} is not an estimation report (missing 'conditions')")
    out: dict[Dynamic, dict[str, float]] = {}
    for name, payload in conditions.items():
        out[Dynamic(name)] = {
            s: float(v) for s, v in payload["subject_eta_map"].items()
        }
    return out


def cmd_analyze(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    _, datasets = _load_trials(args.data)
    provenance = _provenance(args, {})
    payload: dict[str, Any] = {}

    proportions = choice_proportions(datasets, wealth=args.wealth)
    _write_csv(
        out / "choice_proportions.csv",
        ["subject", "condition", "cp_log", "n_discrepant", "n_scored"],
        [
            (p.subject, p.condition.value, p.cp_log, p.n_discrepant, p.n_scored)
            for p in proportions
        ],
        provenance,
    )
    payload["choice_proportions"] = {
        dynamic.value: stats_row
        for dynamic, stats_row in proportion_table(proportions).items()
    }

    by_subject: dict[str, dict[Dynamic, float]] = {}
    for p in proportions:
        if p.cp_log is not None:
            by_subject.setdefault(p.subject, {})[p.condition] = p.cp_log
    paired = sorted(
        s for s, vals in by_subject.items() if len(vals) == 2
    )
    if len(paired) >= 2:
        mult = [by_subject[s][Dynamic.MULTIPLICATIVE] for s in paired]
        add = [by_subject[s][Dynamic.ADDITIVE] for s in paired]
        try:
            bf = jzs_bf_paired(mult, add)
            payload["cp_log_paired_bf"] = {
                "n": len(paired),
                "bf_against_null": bf.bf,
                "t_statistic": bf.t_statistic,
                "effect_median": bf.effect_median,
            }
        except ValueError as exc:
            payload["cp_log_paired_bf"] = {"n": len(paired), "skipped": str(exc)}

    growth_rows = [
        (d.subject, d.condition.value, session_growth_rate(d)) for d in datasets
    ]
    _write_csv(
        out / "growth_rates.csv",
        ["subject", "condition", "growth_rate"],
        growth_rows,
        provenance,
    )

    if args.etas:
        etas = _etas_by_condition(args.etas)
        add_map = etas.get(Dynamic.ADDITIVE, {})
        mult_map = etas.get(Dynamic.MULTIPLICATIVE, {})
        both = sorted(set(add_map) & set(mult_map))
        rows = []
        for subject in both:
            d = distance_to_models(add_map[subject], mult_map[subject])
            rows.append(
                (
                    subject,
                    add_map[subject],
                    mult_map[subject],
                    mult_map[subject] - add_map[subject],
                    d.d_time,
                    d.d_invariant,
                )
            )
        _write_csv(
            out / "distances.csv",
            ["subject", "eta_add", "eta_mult", "eta_shift", "d_time", "d_invariant"],
            rows,
            provenance,
        )
        if len(both) >= 2:
            shifts = [mult_map[s] - add_map[s] for s in both]
            section: dict[str, Any] = {
                "n": len(both),
                "mean_d_time": float(np.mean([r[4] for r in rows])),
                "mean_d_invariant": float(np.mean([r[5] for r in rows])),
                "mean_eta_shift": float(np.mean(shifts)),
            }
            try:
                wres = wilcoxon_signed_rank(shifts)
                section["eta_shift_wilcoxon"] = {
                    "v": wres.v,
                    "p_value": wres.p_value,
                    "method": wres.method,
                }
                bf = jzs_bf_ttest(shifts, side="greater")
                section["eta_shift_bf_greater"] = bf.bf
            except ValueError as exc:
                section["skipped"] = str(exc)
            payload["model_distances"] = section

        deviation = growth_vs_deviation(datasets, etas)
        correlations = {}
        for dynamic, vectors in deviation.items():
            if len(vectors.subjects) >= 2:
                correlations[dynamic.value] = {
                    "n": len(vectors.subjects),
                    "kendall_tau": kendall_tau(
                        vectors.deviations, vectors.growth_rates
                    ),
                }
        if correlations:
            payload["growth_vs_deviation"] = correlations

    _write_report(out / "analysis.json", payload, provenance)
    print(
        f"analyze: {len(datasets)} datasets, {len(proportions)} choice-proportion rows; "
        f"report under {out}"
    )


# ---------------------------------------------------------------------------
# recover


def recovery_cells(
    grid: Sequence[float],
    subjects_per_cell: int,
    config: SamplerConfig,
    seed: int = 0,
    schedule_seed: int = 0,
    eta_sd: float = 0.1,
    beta_mu: Optional[float] = None,
    beta_sd: float = 0.3,
    tolerance: float = 0.2,
    cells: Optional[Sequence[tuple[float, float]]] = None,
) -> list[dict[str, Any]]:
    """Simulate and refit synthetic cohorts over a grid of true risk aversions.

    Each cell is a (true additive eta, true multiplicative eta) pair; its
    cohort draws per-subject etas around the cell value (sd ``eta_sd``) and
    log-normal choice noise, plays the standard schedule in both conditions,
    and is refit with the hierarchical sampler. One result row per cell and
    condition reports the population MAP, its error, and chain diagnostics.

    By default each cell's generating log-sensitivity is auto-calibrated
    (see ``informative_ln_beta`` below); pass ``beta_mu`` to pin it instead.
    """
    if cells is None:
        cells = [(ea, em) for ea in grid for em in grid]
    schedules = {}
    for dynamic in (Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE):
        space = build_gamble_space(build_stimulus_set(dynamic), seed=schedule_seed)
        schedules[dynamic] = make_schedule(space, seed=schedule_seed)

    def informative_ln_beta(dynamic: Dynamic, eta: float) -> float:
        """Log-sensitivity at which synthetic choices are most informative.

        Trial wealth is frozen, so utility differences shrink or grow by
        orders of magnitude as eta moves; at a fixed sensitivity, extreme
        cohorts produce either coin-flip choices (no signal) or perfectly
        ranked ones (flat likelihood plateaus), and neither constrains eta.
        Maximize the Fisher information about eta over the schedule's
        trials — with the sensitivity itself profiled out, because its
        common-scale component is absorbed by the per-subject sensitivity
        parameter — restricted to the log-sensitivity band the hierarchical
        model's subject level can reach.
        """
        h = 0.02

        def du(value: float) -> np.ndarray:
            model = Isoelastic(value)
            return np.array(
                [
                    utility_difference(model, INITIAL_WEALTH, pair)
                    for pair in schedules[dynamic].trials
                ]
            )

        mid = du(eta)
        slope = (du(eta + h) - du(eta - h)) / (2 * h)
        grid_lb = np.arange(-6.0, 9.01, 0.25)
        infos = []
        for lb in grid_lb:
            beta = float(np.exp(lb))
            p = expit(beta * mid)
            weight = p * (1 - p) * beta**2
            i_ee = float(np.sum(weight * slope**2))
            i_eb = float(np.sum(weight * slope * mid))
            i_bb = float(np.sum(weight * mid**2))
            infos.append(i_ee - (i_eb**2 / i_bb if i_bb > 0 else 0.0))
        # Among sensitivities carrying enough information, prefer the one
        # closest to the center of the subject-level support: sensitivities
        # far outside it are reachable only through the hierarchy's tails,
        # whose prior pull drags eta along the sensitivity-eta ridge.
        threshold = min(200.0, 0.8 * max(infos))
        center = 0.55
        feasible = [
            float(lb) for lb, v in zip(grid_lb, infos) if v >= threshold
        ]
        return min(feasible, key=lambda lb: abs(lb - center))

    from .mcmc import map_estimate  # local import keeps module load light

    rows: list[dict[str, Any]] = []
    for ci, (eta_add, eta_mult) in enumerate(cells):
        truth = {Dynamic.ADDITIVE: eta_add, Dynamic.MULTIPLICATIVE: eta_mult}
        datasets: list[SubjectDataset] = []
        for di, dynamic in enumerate((Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE)):
            rng = np.random.default_rng(np.random.SeedSequence([seed, ci, di]))
            if beta_mu is None:
                cell_beta_mu = informative_ln_beta(dynamic, truth[dynamic])
            else:
                cell_beta_mu = beta_mu
            for si in range(subjects_per_cell):
                eta_i = float(truth[dynamic] + eta_sd * rng.standard_normal())
                beta_i = float(np.exp(cell_beta_mu + beta_sd * rng.standard_normal()))
                agent = AgentConfig.uniform(f"cell{ci}_s{si:02d}", Isoelastic(eta_i), beta_i)
                datasets.append(
                    simulate_choices(
                        agent,
                        schedules[dynamic],
                        seed=_child_seed(seed, ci, di, si),
                        subject=agent.name,
                    )
                )
        fits = fit_cohort(datasets, config)
        for dynamic in (Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE):
            posterior = fits[dynamic]
            summary = summarize(posterior)
            mu_map = map_estimate(posterior.pooled("mu_eta"))
            rows.append(
                {
                    "cell": ci,
                    "true_eta_add": eta_add,
                    "true_eta_mult": eta_mult,
                    "condition": dynamic.value,
                    "true_eta": truth[dynamic],
                    "population_map_eta": mu_map,
                    "abs_error": abs(mu_map - truth[dynamic]),
                    "within_tolerance": abs(mu_map - truth[dynamic]) <= tolerance,
                    "max_rhat": max(summary.rhats.values()),
                }
            )
    return rows


def cmd_recover(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    grid = _float_list(args.grid_eta, "--grid-eta")
    if not grid:
        raise UsageError("--grid-eta must name at least one value")
    if args.subjects_per_cell <= 0:
        raise UsageError("--subjects-per-cell must be positive")
    config = _sampler_config(args)
    provenance = _provenance(
        args, {"sampler": args.seed, "cohorts": args.seed, "space": args.schedule_seed}
    )
    rows = recovery_cells(
        grid,
        args.subjects_per_cell,
        config,
        seed=args.seed,
        schedule_seed=args.schedule_seed,
        eta_sd=args.eta_sd,
        beta_mu=args.beta_mu,
        beta_sd=args.beta_sd,
        tolerance=args.tolerance,
    )
    header = [
        "cell",
        "true_eta_add",
        "true_eta_mult",
        "condition",
        "true_eta",
        "population_map_eta",
        "abs_error",
        "within_tolerance",
        "max_rhat",
    ]
    _write_csv(
        out / "recovery.csv",
        header,
        [[row[k] for k in header] for row in rows],
        provenance,
    )
    cell_ok: dict[int, bool] = {}
    for row in rows:
        cell_ok[row["cell"]] = cell_ok.get(row["cell"], True) and row["within_tolerance"]
    n_cells = len(cell_ok)
    n_ok = sum(cell_ok.values())
    _write_report(
        out / "report.json",
        {
            "n_cells": n_cells,
            "cells_within_tolerance": n_ok,
            "tolerance": args.tolerance,
            "max_rhat": max(row["max_rhat"] for row in rows),
        },
        provenance,
    )
    print(
        f"recover: {n_ok}/{n_cells} cells within +/-{args.tolerance} "
        f"(worst R-hat {max(row['max_rhat'] for row in rows):.4f}); report under {out}"
    )


# ---------------------------------------------------------------------------
# serve


def resolve_server_settings(
    args: argparse.Namespace, env: Optional[dict[str, str]] = None
) -> tuple[int, str]:
    """Resolve port and data directory: flags beat environment beats defaults."""
    env = os.environ if env is None else env
    if args.port is not None:
        port = args.port
    elif "ERGODIC_CHOICE_PORT" in env:
        try:
            port = int(env["ERGODIC_CHOICE_PORT"])
        except ValueError:
            raise UsageError(
                f"ERGODIC_CHOICE_PORT must be an integer, got {env['ERGODIC_CHOICE_PORT']!r}"
            )
    else:
        port = DEFAULT_PORT
    if args.data is not None:
        data = args.data
    else:
        data = env.get("ERGODIC_CHOICE_DATA", DEFAULT_DATA_DIR)
    return port, data


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    from .server import create_app

    port, data = resolve_server_settings(args)
    provenance = _provenance(args, {})
    print("serve: provenance " + canonical_json(provenance))
    app = create_app(data_dir=data, static_dir=args.static)
    print(f"serve: listening on {args.host}:{port}, data under {data}")
    uvicorn.run(app, host=args.host, port=port, log_level="warning")


# ---------------------------------------------------------------------------
# export


def cmd_export(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    provenance = _provenance(args, {})

    rows = []
    for dynamic in (Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE):
        stimuli = build_stimulus_set(dynamic)
        for a, b in itertools.combinations(stimuli.outcomes, 2):
            rows.append((dynamic.value, a.id, b.id, gamble_growth_rate(Gamble((a, b)))))
    _write_csv(
        out / "growth_tables.csv",
        ["condition", "first", "second", "growth_rate"],
        rows,
        provenance,
    )
    written = ["growth_tables.csv"]

    if args.data:
        _, datasets = _load_trials(args.data)
        proportions = choice_proportions(datasets)
        _write_csv(
            out / "choice_proportions.csv",
            ["subject", "condition", "cp_log", "n_discrepant", "n_scored"],
            [
                (p.subject, p.condition.value, p.cp_log, p.n_discrepant, p.n_scored)
                for p in proportions
            ],
            provenance,
        )
        written.append("choice_proportions.csv")

    if args.etas:
        etas = _etas_by_condition(args.etas)
        add_map = etas.get(Dynamic.ADDITIVE, {})
        mult_map = etas.get(Dynamic.MULTIPLICATIVE, {})
        both = sorted(set(add_map) & set(mult_map))
        scatter = []
        for subject in both:
            d = distance_to_models(add_map[subject], mult_map[subject])
            scatter.append(
                (subject, add_map[subject], mult_map[subject], d.d_time, d.d_invariant)
            )
        _write_csv(
            out / "eta_scatter.csv",
            ["subject", "eta_add", "eta_mult", "d_time", "d_invariant"],
            scatter,
            provenance,
        )
        written.append("eta_scatter.csv")

    print(f"export: wrote {', '.join(written)} under {out}")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergodic-choice",
        description="Design, simulate, run, and analyze two-dynamic risky-choice experiments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument(
            "--config",
            help="JSON file whose entries override command-line flags",
        )
        return sub

    sub = add("design", "write stimulus, gamble, schedule, and passive-sequence tables")
    sub.add_argument("--dynamic", default="both", help="additive, multiplicative, or both")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_design)

    sub = add("simulate", "simulate synthetic sessions or long-run wealth trajectories")
    sub.add_argument(
        "--agents",
        required=True,
        help="roster like timeoptimal,iso:0,iso:1,pt:0.5,0.5,2",
    )
    sub.add_argument("--dynamic", default="both")
    sub.add_argument("--beta", type=float, default=DEFAULT_BETA, help="choice noise")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--schedule-seed", type=int, default=0)
    sub.add_argument(
        "--horizon-week",
        action="store_true",
        help="simulate week-long wealth trajectories instead of sessions",
    )
    sub.add_argument("--horizon-trials", type=int, default=None)
    sub.add_argument("--reference", default=None, help="trajectory comparison reference agent")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_simulate)

    sub = add("infer", "fit the hierarchical risk-aversion model per condition")
    sub.add_argument("--data", required=True, help="JSONL trial file")
    sub.add_argument("--chains", type=int, default=10)
    sub.add_argument("--samples", type=int, default=10_000)
    sub.add_argument("--burnin", type=int, default=1_000)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--dump-chains", action="store_true")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_infer)

    sub = add("select", "latent-mixture comparison of candidate choice models")
    sub.add_argument("--data", required=True)
    sub.add_argument("--chains", type=int, default=None)
    sub.add_argument("--samples", type=int, default=None)
    sub.add_argument("--burnin", type=int, default=None)
    sub.add_argument("--draws", type=int, default=100_000, help="frequency posterior draws")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_select)

    sub = add("analyze", "model-free statistics: choice proportions, shifts, growth")
    sub.add_argument("--data", required=True)
    sub.add_argument("--etas", default=None, help="report.json from 'infer'")
    sub.add_argument("--wealth", type=float, default=None, help="override scoring wealth")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_analyze)

    sub = add("recover", "parameter-recovery study over a grid of true etas")
    sub.add_argument("--grid-eta", default="-0.5,0,0.5,1,1.5")
    sub.add_argument("--subjects-per-cell", type=int, default=20)
    sub.add_argument("--chains", type=int, default=4)
    sub.add_argument("--samples", type=int, default=2_500)
    sub.add_argument("--burnin", type=int, default=500)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--schedule-seed", type=int, default=0)
    sub.add_argument("--eta-sd", type=float, default=0.1)
    sub.add_argument(
        "--beta-mu",
        type=float,
        default=None,
        help="pin the generating log-sensitivity mean (default: auto-calibrate per cell)",
    )
    sub.add_argument("--beta-sd", type=float, default=0.3)
    sub.add_argument("--tolerance", type=float, default=0.2)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_recover)

    sub = add("serve", "run the HTTP session server")
    sub.add_argument("--port", type=int, default=None, help="default $ERGODIC_CHOICE_PORT")
    sub.add_argument("--data", default=None, help="default $ERGODIC_CHOICE_DATA")
    sub.add_argument("--static", default=None, help="directory of browser task assets")
    sub.add_argument("--host", default="127.0.0.1")
    sub.set_defaults(func=cmd_serve)

    sub = add("export", "write figure-ready CSV tables")
    sub.add_argument("--data", default=None, help="JSONL trial file")
    sub.add_argument("--etas", default=None, help="report.json from 'infer'")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_export)

    return parser


# Flags whose values are comma-separated lists that may start with a minus
# sign; argparse mistakes such values for option strings unless the flag and
# value are joined with '='.
_LIST_FLAGS = ("--grid-eta",)


def _join_list_flag_values(argv: Sequence[str]) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token in _LIST_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(token + "=" + argv[i + 1])
            i += 2
        else:
            out.append(token)
            i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = parser.parse_args(_join_list_flag_values(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    for action in parser._subparsers._group_actions:
        if hasattr(action, "choices") and args.command in action.choices:
            args._parser = action.choices[args.command]
            break
    try:
        _apply_config(args)
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
