"""Trial records, session manifests, validation, payout, and JSONL persistence.

The canonical on-disk format is JSON Lines: one tagged object per line, with
keys sorted and no whitespace, so serialize -> parse -> serialize is
byte-identical. Three record tags exist: "provenance" (free-form run
metadata), "manifest" (one per subject), and "trial".
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .design import (
    INITIAL_WEALTH,
    N_CORE_PAIRS,
    N_NO_BRAINERS,
    SCHEDULE_LENGTH,
    GamblePair,
    PairKind,
    Side,
    StimulusSet,
    build_stimulus_set,
    dominant_choice,
)
from .dynamics import Dynamic, Gamble, apply_outcome

PAYOUT_TRIALS = 10
PAYOUT_MIN = 0.0
PAYOUT_MAX = 2000.0


class Choice(str, Enum):
    """What the subject did on an active trial."""

    LEFT = "left"
    RIGHT = "right"
    TIMEOUT = "timeout"

    @property
    def side(self) -> Optional[Side]:
        if self is Choice.LEFT:
            return Side.LEFT
        if self is Choice.RIGHT:
            return Side.RIGHT
        return None


_STIMULUS_SETS: dict[Dynamic, StimulusSet] = {}


def stimulus_set_for(condition: Dynamic) -> StimulusSet:
    """The canonical stimulus set records of this condition resolve against."""
    if condition not in _STIMULUS_SETS:
        _STIMULUS_SETS[condition] = build_stimulus_set(condition)
    return _STIMULUS_SETS[condition]


@dataclass(frozen=True)
class TrialRecord:
    """One active-session trial: the pair shown and the response given.

    Wealth is the session wealth at choice time, frozen for the whole active
    session. Timeout trials carry the assigned worst stimulus instead of a
    response time. delta_u and theta are optional simulation audit fields:
    the utility difference and left-choice probability that generated the
    choice.
    """

    subject: str
    condition: Dynamic
    index: int
    left_ids: tuple[int, int]
    right_ids: tuple[int, int]
    kind: PairKind
    choice: Choice
    rt_ms: Optional[float]
    t_start_ms: float
    t_response_ms: float
    wealth: float
    assigned_id: Optional[int] = None
    delta_u: Optional[float] = None
    theta: Optional[float] = None

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"trial index must be nonnegative, got {self.index}")
        if len(self.left_ids) != 2 or len(self.right_ids) != 2:
            raise ValueError("each side of a pair needs exactly two stimulus ids")
        if self.choice is Choice.TIMEOUT:
            if self.assigned_id is None:
                raise ValueError("timeout trials must carry an assigned stimulus id")
            if self.rt_ms is not None:
                raise ValueError("timeout trials have no response time")
        else:
            if self.assigned_id is not None:
                raise ValueError("only timeout trials carry an assigned stimulus id")
            if self.rt_ms is None or not self.rt_ms > 0:
                raise ValueError(f"response time must be positive, got {self.rt_ms}")
        if self.t_response_ms < self.t_start_ms:
            raise ValueError("response timestamp precedes trial start")
        if not math.isfinite(self.wealth):
            raise ValueError(f"non-finite session wealth {self.wealth}")

    def pair(self) -> GamblePair:
        """Resolve the stored stimulus ids into the gamble pair shown."""
        stimuli = stimulus_set_for(self.condition)
        left = Gamble((stimuli.by_id(self.left_ids[0]), stimuli.by_id(self.left_ids[1])))
        right = Gamble(
            (stimuli.by_id(self.right_ids[0]), stimuli.by_id(self.right_ids[1]))
        )
        return GamblePair(left=left, right=right, kind=self.kind)

    def to_json_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "record": "trial",
            "subject": self.subject,
            "condition": self.condition.value,
            "index": self.index,
            "left": list(self.left_ids),
            "right": list(self.right_ids),
            "kind": self.kind.value,
            "choice": self.choice.value,
            "t_start_ms": self.t_start_ms,
            "t_response_ms": self.t_response_ms,
            "wealth": self.wealth,
        }
        if self.rt_ms is not None:
            d["rt_ms"] = self.rt_ms
        if self.assigned_id is not None:
            d["assigned"] = self.assigned_id
        if self.delta_u is not None:
            d["delta_u"] = self.delta_u
        if self.theta is not None:
            d["theta"] = self.theta
        return d

    @classmethod
    def from_json_dict(cls, d: Mapping[str, Any]) -> "TrialRecord":
        return cls(
            subject=d["subject"],
            condition=Dynamic(d["condition"]),
            index=d["index"],
            left_ids=tuple(d["left"]),
            right_ids=tuple(d["right"]),
            kind=PairKind(d["kind"]),
            choice=Choice(d["choice"]),
            rt_ms=d.get("rt_ms"),
            t_start_ms=d["t_start_ms"],
            t_response_ms=d["t_response_ms"],
            wealth=d["wealth"],
            assigned_id=d.get("assigned"),
            delta_u=d.get("delta_u"),
            theta=d.get("theta"),
        )


@dataclass(frozen=True)
class SessionManifest:
    """Per-subject experiment bookkeeping: day order, seeds, payout rule.

    Seed tuples align with day_order: element 0 belongs to the first day's
    dynamic.
    """

    subject: str
    day_order: tuple[Dynamic, Dynamic]
    passive_seeds: tuple[int, int]
    space_seeds: tuple[int, int]
    schedule_seeds: tuple[int, int]
    endowment: float = INITIAL_WEALTH
    payout_trials: int = PAYOUT_TRIALS
    payout_min: float = PAYOUT_MIN
    payout_max: float = PAYOUT_MAX

    def __post_init__(self) -> None:
        if len(set(self.day_order)) != 2:
            raise ValueError("day order must contain both dynamics exactly once")
        for name in ("passive_seeds", "space_seeds", "schedule_seeds"):
            if len(getattr(self, name)) != 2:
                raise ValueError(f"{name} must hold one seed per day")

    def seed_for(self, kind: str, condition: Dynamic) -> int:
        day = self.day_order.index(condition)
        return getattr(self, f"{kind}_seeds")[day]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "record": "manifest",
            "subject": self.subject,
            "day_order": [d.value for d in self.day_order],
            "passive_seeds": list(self.passive_seeds),
            "space_seeds": list(self.space_seeds),
            "schedule_seeds": list(self.schedule_seeds),
            "endowment": self.endowment,
            "payout_trials": self.payout_trials,
            "payout_min": self.payout_min,
            "payout_max": self.payout_max,
        }

    @classmethod
    def from_json_dict(cls, d: Mapping[str, Any]) -> "SessionManifest":
        return cls(
            subject=d["subject"],
            day_order=tuple(Dynamic(x) for x in d["day_order"]),
            passive_seeds=tuple(d["passive_seeds"]),
            space_seeds=tuple(d["space_seeds"]),
            schedule_seeds=tuple(d["schedule_seeds"]),
            endowment=d["endowment"],
            payout_trials=d["payout_trials"],
            payout_min=d["payout_min"],
            payout_max=d["payout_max"],
        )


@dataclass(frozen=True)
class SubjectDataset:
    """All active trials of one subject in one condition, at frozen wealth."""

    subject: str
    condition: Dynamic
    wealth: float
    trials: tuple[TrialRecord, ...]

    def __post_init__(self) -> None:
        for t in self.trials:
            if t.subject != self.subject or t.condition is not self.condition:
                raise ValueError(
                    f"trial {t.index} belongs to {t.subject}/{t.condition.value}, "
                    f"not {self.subject}/{self.condition.value}"
                )
            if t.wealth != self.wealth:
                raise ValueError(
                    f"trial {t.index} wealth {t.wealth} differs from the frozen "
                    f"session wealth {self.wealth}"
                )

    def no_brainer_trials(self) -> tuple[TrialRecord, ...]:
        return tuple(t for t in self.trials if t.kind is PairKind.NO_BRAINER)

    def no_brainer_accuracy(self) -> float:
        """Fraction of dominated pairs where the dominant side was chosen.

        Timeouts count as misses. Returns NaN when the dataset has no
        dominated pairs to score.
        """
        nb = self.no_brainer_trials()
        if not nb:
            return math.nan
        hits = sum(1 for t in nb if t.choice.side is dominant_choice(t.pair()))
        return hits / len(nb)


def canonical_json(d: Mapping[str, Any]) -> str:
    """The one true JSON encoding: sorted keys, no whitespace."""
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def write_jsonl(
    path: str | Path,
    trials: Iterable[TrialRecord] = (),
    manifests: Iterable[SessionManifest] = (),
    provenance: Optional[Mapping[str, Any]] = None,
) -> None:
    """Write records as canonical JSON Lines: provenance, manifests, trials."""
    lines: list[str] = []
    if provenance is not None:
        tagged = {"record": "provenance", **provenance}
        lines.append(canonical_json(tagged))
    for m in manifests:
        lines.append(canonical_json(m.to_json_dict()))
    for t in trials:
        lines.append(canonical_json(t.to_json_dict()))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


@dataclass(frozen=True)
class RecordFile:
    """Parsed contents of a canonical JSONL file."""

    provenance: Optional[dict[str, Any]]
    manifests: tuple[SessionManifest, ...]
    trials: tuple[TrialRecord, ...]


def read_jsonl(path: str | Path) -> RecordFile:
    """Parse a canonical JSONL file; malformed lines raise with line numbers."""
    provenance: Optional[dict[str, Any]] = None
    manifests: list[SessionManifest] = []
    trials: list[TrialRecord] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            tag = obj.pop("record")
            if tag == "provenance":
                provenance = obj
            elif tag == "manifest":
                manifests.append(SessionManifest.from_json_dict(obj))
            elif tag == "trial":
                trials.append(TrialRecord.from_json_dict(obj))
            else:
                raise ValueError(f"unknown record tag {tag!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return RecordFile(
        provenance=provenance, manifests=tuple(manifests), trials=tuple(trials)
    )


def group_datasets(trials: Iterable[TrialRecord]) -> list[SubjectDataset]:
    """Group trials into per-subject per-condition datasets, ordered by index."""
    grouped: dict[tuple[str, Dynamic], list[TrialRecord]] = {}
    for t in trials:
        grouped.setdefault((t.subject, t.condition), []).append(t)
    datasets = []
    for (subject, condition), items in sorted(
        grouped.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
    ):
        items.sort(key=lambda t: t.index)
        datasets.append(
            SubjectDataset(
                subject=subject,
                condition=condition,
                wealth=items[0].wealth,
                trials=tuple(items),
            )
        )
    return datasets


@dataclass(frozen=True)
class DatasetIssue:
    subject: str
    condition: Dynamic
    message: str


@dataclass(frozen=True)
class DatasetSummary:
    subject: str
    condition: Dynamic
    n_trials: int
    n_core: int
    n_no_brainers: int
    no_brainer_accuracy: float
    excluded: bool


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[DatasetIssue, ...]
    summaries: tuple[DatasetSummary, ...]

    @property
    def ok(self) -> bool:
        return not self.issues

    def excluded_subjects(self) -> tuple[str, ...]:
        return tuple(
            sorted({s.subject for s in self.summaries if s.excluded})
        )


def validate_dataset(trials: Iterable[TrialRecord]) -> ValidationReport:
    """Structural and attention-check validation of active-session records.

    Checks, per subject and condition: exactly 312 trials indexed 0..311;
    each of the 144 ordered core pairs appearing exactly twice; 24 dominated
    pairs, each genuinely dominated; a single frozen wealth. Subjects whose
    dominated-pair accuracy is at or below chance are flagged for exclusion,
    not errored.
    """
    issues: list[DatasetIssue] = []
    summaries: list[DatasetSummary] = []

    grouped: dict[tuple[str, Dynamic], list[TrialRecord]] = {}
    for t in trials:
        grouped.setdefault((t.subject, t.condition), []).append(t)

    for (subject, condition), items in sorted(
        grouped.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
    ):
        def issue(message: str) -> None:
            issues.append(
                DatasetIssue(subject=subject, condition=condition, message=message)
            )

        items.sort(key=lambda t: t.index)
        indices = [t.index for t in items]
        if len(items) != SCHEDULE_LENGTH:
            missing = sorted(set(range(SCHEDULE_LENGTH)) - set(indices))
            issue(
                f"expected {SCHEDULE_LENGTH} trials, got {len(items)}"
                + (f"; missing indices {missing[:10]}" if missing else "")
            )
        dup = sorted({i for i in indices if indices.count(i) > 1})
        if dup:
            issue(f"duplicate trial indices {dup[:10]}")

        wealths = {t.wealth for t in items}
        if len(wealths) > 1:
            issue(f"session wealth not frozen: saw {sorted(wealths)[:5]}")

        core_counts: dict[tuple[int, ...], int] = {}
        nb_items: list[TrialRecord] = []
        for t in items:
            try:
                pair = t.pair()
            except (KeyError, ValueError) as exc:
                issue(f"trial {t.index}: unresolvable stimuli: {exc}")
                continue
            if t.kind is PairKind.CORE:
                key = t.left_ids + t.right_ids
                core_counts[key] = core_counts.get(key, 0) + 1
                if dominant_choice(pair) is not None:
                    issue(f"trial {t.index}: core pair is statewise dominated")
            else:
                nb_items.append(t)
                if dominant_choice(pair) is None:
                    issue(f"trial {t.index}: dominated pair has no dominant side")

        if len(items) == SCHEDULE_LENGTH:
            if len(core_counts) != N_CORE_PAIRS or set(core_counts.values()) != {2}:
                issue(
                    f"core pairs malformed: {len(core_counts)} distinct, "
                    f"counts {sorted(set(core_counts.values()))}"
                )
            if len(nb_items) != N_NO_BRAINERS:
                issue(f"expected {N_NO_BRAINERS} dominated pairs, got {len(nb_items)}")

        if nb_items:
            hits = sum(
                1 for t in nb_items if t.choice.side is dominant_choice(t.pair())
            )
            accuracy = hits / len(nb_items)
        else:
            accuracy = math.nan
        excluded = bool(nb_items) and accuracy <= 0.5
        summaries.append(
            DatasetSummary(
                subject=subject,
                condition=condition,
                n_trials=len(items),
                n_core=sum(core_counts.values()),
                n_no_brainers=len(nb_items),
                no_brainer_accuracy=accuracy,
                excluded=excluded,
            )
        )

    return ValidationReport(issues=tuple(issues), summaries=tuple(summaries))


@dataclass(frozen=True)
class PayoutResult:
    amount: float
    chosen_indices: tuple[int, ...]
    wealth_before_clamp: float


def realize_payout(
    trials: Sequence[TrialRecord],
    seed: int,
    endowment: float = INITIAL_WEALTH,
) -> PayoutResult:
    """Draw 10 trials, resolve each chosen gamble by coin flip, clamp the result.

    Chosen trials are applied in schedule order to the day's wealth, starting
    from the endowment. Timeout trials apply their assigned worst stimulus
    instead of a coin flip. The final amount is clamped to [0, 2000] DKK.
    """
    if len(trials) < PAYOUT_TRIALS:
        raise ValueError(
            f"payout needs at least {PAYOUT_TRIALS} trials, got {len(trials)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    picked = rng.choice(len(trials), size=PAYOUT_TRIALS, replace=False)
    picked_trials = sorted((trials[i] for i in picked), key=lambda t: t.index)

    wealth = endowment
    for t in picked_trials:
        stimuli = stimulus_set_for(t.condition)
        if t.choice is Choice.TIMEOUT:
            outcome = stimuli.by_id(t.assigned_id)
        else:
            gamble = t.pair().gamble(t.choice.side)
            outcome = gamble.outcomes[int(rng.integers(2))]
        if t.condition is Dynamic.MULTIPLICATIVE and wealth <= 0:
            break
        wealth = apply_outcome(wealth, outcome)
    amount = min(max(wealth, PAYOUT_MIN), PAYOUT_MAX)
    return PayoutResult(
        amount=amount,
        chosen_indices=tuple(int(t.index) for t in picked_trials),
        wealth_before_clamp=wealth,
    )


_COLUMN_ALIASES: dict[str, tuple[str, ...]] = {
    "subject": ("subject", "subject_id", "participant", "id", "subjid"),
    "condition": ("condition", "dynamic", "session", "gamble_type"),
    "index": ("index", "trial", "trial_index", "trial_nr", "trialnum"),
    "left1": ("left1", "left_a", "l1", "img_left1", "fractal_left1"),
    "left2": ("left2", "left_b", "l2", "img_left2", "fractal_left2"),
    "right1": ("right1", "right_a", "r1", "img_right1", "fractal_right1"),
    "right2": ("right2", "right_b", "r2", "img_right2", "fractal_right2"),
    "kind": ("kind", "pair_type", "trial_type", "nobrainer"),
    "choice": ("choice", "response", "chosen_side", "keypress"),
    "rt_ms": ("rt_ms", "rt", "reaction_time", "response_time"),
    "wealth": ("wealth", "session_wealth", "wealth_at_choice"),
}

_CONDITION_VALUES = {
    "additive": Dynamic.ADDITIVE,
    "add": Dynamic.ADDITIVE,
    "0": Dynamic.ADDITIVE,
    "0.0": Dynamic.ADDITIVE,
    "multiplicative": Dynamic.MULTIPLICATIVE,
    "mult": Dynamic.MULTIPLICATIVE,
    "1": Dynamic.MULTIPLICATIVE,
    "1.0": Dynamic.MULTIPLICATIVE,
}

_CHOICE_VALUES = {
    "left": Choice.LEFT,
    "l": Choice.LEFT,
    "0": Choice.LEFT,
    "right": Choice.RIGHT,
    "r": Choice.RIGHT,
    "1": Choice.RIGHT,
    "timeout": Choice.TIMEOUT,
    "none": Choice.TIMEOUT,
    "nan": Choice.TIMEOUT,
    "": Choice.TIMEOUT,
}


@dataclass(frozen=True)
class ImportReport:
    trials: tuple[TrialRecord, ...]
    n_rows: int
    n_imported: int
    column_map: dict[str, str]
    dropped: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.n_imported > 0 and not self.dropped


def import_external_csv(path: str | Path) -> ImportReport:
    """Best-effort mapping of an externally published CSV into TrialRecords.

    Columns are matched by a small alias table; rows that cannot be resolved
    are reported, never silently dropped. Missing timing columns are
    synthesized (trials spaced 4 s apart) since downstream inference ignores
    them.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        fieldnames = [f.strip().lower() for f in reader.fieldnames or []]
        rows = [
            {k.strip().lower(): (v or "").strip() for k, v in row.items()}
            for row in reader
        ]

    column_map: dict[str, str] = {}
    for canonical, aliases in _COLUMN_ALIASES.items():
        for alias in aliases:
            if alias in fieldnames:
                column_map[canonical] = alias
                break

    required = ("subject", "condition", "index", "left1", "left2", "right1", "right2", "choice")
    missing = [c for c in required if c not in column_map]
    if missing:
        return ImportReport(
            trials=(),
            n_rows=len(rows),
            n_imported=0,
            column_map=column_map,
            dropped=(f"unmapped required columns: {', '.join(missing)}",),
        )

    trials: list[TrialRecord] = []
    dropped: list[str] = []
    for rownum, row in enumerate(rows, start=2):
        try:
            condition = _CONDITION_VALUES[row[column_map["condition"]].lower()]
            choice = _CHOICE_VALUES[row[column_map["choice"]].lower()]
            index = int(float(row[column_map["index"]]))
            left = (
                int(float(row[column_map["left1"]])),
                int(float(row[column_map["left2"]])),
            )
            right = (
                int(float(row[column_map["right1"]])),
                int(float(row[column_map["right2"]])),
            )
            wealth = (
                float(row[column_map["wealth"]])
                if "wealth" in column_map
                else INITIAL_WEALTH
            )
            rt_raw = row.get(column_map.get("rt_ms", ""), "")
            rt_ms = float(rt_raw) if rt_raw not in ("", "nan") else None
            if rt_ms is not None and rt_ms < 10:
                rt_ms *= 1000.0  # seconds, not milliseconds
            stimuli = stimulus_set_for(condition)
            pair = GamblePair(
                left=Gamble((stimuli.by_id(left[0]), stimuli.by_id(left[1]))),
                right=Gamble((stimuli.by_id(right[0]), stimuli.by_id(right[1]))),
                kind=PairKind.CORE,
            )
            kind = (
                PairKind.NO_BRAINER
                if dominant_choice(pair) is not None
                else PairKind.CORE
            )
            t_start = 4000.0 * index
            if choice is Choice.TIMEOUT:
                worst = min(
                    pair.left.outcomes + pair.right.outcomes, key=lambda o: o.value
                )
                record = TrialRecord(
                    subject=row[column_map["subject"]],
                    condition=condition,
                    index=index,
                    left_ids=left,
                    right_ids=right,
                    kind=kind,
                    choice=choice,
                    rt_ms=None,
                    t_start_ms=t_start,
                    t_response_ms=t_start,
                    wealth=wealth,
                    assigned_id=worst.id,
                )
            else:
                rt = rt_ms if rt_ms is not None else 1000.0
                record = TrialRecord(
                    subject=row[column_map["subject"]],
                    condition=condition,
                    index=index,
                    left_ids=left,
                    right_ids=right,
                    kind=kind,
                    choice=choice,
                    rt_ms=rt,
                    t_start_ms=t_start,
                    t_response_ms=t_start + rt,
                    wealth=wealth,
                )
            trials.append(record)
        except (KeyError, TypeError, ValueError) as exc:
            dropped.append(f"row {rownum}: {exc}")

    return ImportReport(
        trials=tuple(trials),
        n_rows=len(rows),
        n_imported=len(trials),
        column_map=column_map,
        dropped=tuple(dropped),
    )
