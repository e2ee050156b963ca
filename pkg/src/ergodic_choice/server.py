"""HTTP session server: serves trials to a browser task and records responses.

A session is one subject playing one condition: the passive learning phase
(334 cued stimuli, each requiring a button press within a one-second window)
followed by the active choice phase (312 two-gamble trials at frozen session
wealth). All state is persisted as canonical JSON Lines under the data
directory, so a restarted server resumes every session where it left off,
and the trial file of a completed session can be fed directly to the
command-line inference tools.

Environment variables: only ``ERGODIC_CHOICE_PORT`` (default serve port) and
``ERGODIC_CHOICE_DATA`` (default data directory) are honored; both are
resolved by the ``serve`` subcommand, not here.

Endpoints:

* ``POST /api/session/{id}`` — create (or idempotently re-confirm) a session
  from ``{"subject", "condition", "seed"}``.
* ``GET /api/session/{id}/next-trial`` — the current trial descriptor:
  phase, stimulus ids, and timing windows. Repeated GETs are read-only.
* ``POST /api/session/{id}/response`` — ``{"trial", "choice", "rt_ms"}``;
  returns an acknowledgement plus a next-phase hint. Passive presses outside
  the window re-queue the stimulus with the message "press button earlier".
  Active timeouts (or responses slower than the window) record the worst
  stimulus of the pair. Resubmitting an identical response for an
  already-recorded trial index is idempotent.
* ``GET /api/session/{id}/summary`` — phase, wealth trajectory, and a payout
  preview once the active session is complete.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .design import (
    SCHEDULE_LENGTH,
    GamblePair,
    PassiveSequence,
    Schedule,
    StimulusSet,
    build_gamble_space,
    build_stimulus_set,
    generate_passive_sequence,
    make_schedule,
)
from .dynamics import Dynamic
from .records import (
    Choice,
    PayoutResult,
    SessionManifest,
    TrialRecord,
    canonical_json,
    read_jsonl,
    realize_payout,
    write_jsonl,
)

PASSIVE_WINDOW_MS = 1000.0
ACTIVE_WINDOW_MS = 5000.0
JITTER_RANGE_MS = (1500.0, 3000.0)
LATE_PRESS_MESSAGE = "press button earlier"

_SESSION_ID = re.compile(r"^[A-Za-z0-9_-]{1,64}$")

# Fixed tags that separate the deterministic random streams derived from a
# session's base seed.
_JITTER_TAG = 1
_PAYOUT_TAG = 2


def derive_manifest(subject: str, condition: Dynamic, seed: int) -> SessionManifest:
    """Expand one base seed into a full per-subject manifest.

    The session's condition is placed first in the day order, so
    ``seed_for(kind, condition)`` picks element 0 of each seed pair.
    """
    other = (
        Dynamic.MULTIPLICATIVE if condition is Dynamic.ADDITIVE else Dynamic.ADDITIVE
    )
    state = np.random.SeedSequence(seed).generate_state(6)
    return SessionManifest(
        subject=subject,
        day_order=(condition, other),
        passive_seeds=(int(state[0]), int(state[1])),
        space_seeds=(int(state[2]), int(state[3])),
        schedule_seeds=(int(state[4]), int(state[5])),
    )


def _derived_seed(base: int, tag: int) -> int:
    return int(np.random.SeedSequence([base, tag]).generate_state(1)[0])


def worst_stimulus_id(pair: GamblePair) -> int:
    """The least favorable stimulus shown on a trial (ties break on id)."""
    outcomes = list(pair.left.outcomes) + list(pair.right.outcomes)
    return min(outcomes, key=lambda o: (o.value, o.id)).id


class CreateSessionBody(BaseModel):
    condition: str
    seed: int = 0
    subject: Optional[str] = None


class ResponseBody(BaseModel):
    trial: int
    choice: str
    rt_ms: Optional[float] = None


@dataclass
class Session:
    """In-memory state of one subject-condition session, mirrored on disk."""

    session_id: str
    manifest: SessionManifest
    condition: Dynamic
    seed: int
    directory: Path
    stimuli: StimulusSet
    sequence: PassiveSequence
    schedule: Schedule
    jitter_ms: np.ndarray
    passive_wealth_path: np.ndarray
    passive_applied: int = 0
    passive_attempt: int = 0
    records: dict[int, TrialRecord] = field(default_factory=dict)
    passive_acks: dict[int, dict[str, Any]] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    # -- derived state ---------------------------------------------------

    @property
    def passive_total(self) -> int:
        return len(self.sequence.stimulus_ids)

    @property
    def phase(self) -> str:
        if self.passive_applied < self.passive_total:
            return "passive"
        if len(self.records) < SCHEDULE_LENGTH:
            return "active"
        return "done"

    @property
    def next_active_index(self) -> int:
        return len(self.records)

    @property
    def wealth(self) -> float:
        """Current display wealth: the passive path while learning, then the
        frozen active-session endowment."""
        if self.phase == "passive":
            if self.passive_applied == 0:
                return self.manifest.endowment
            return float(self.passive_wealth_path[self.passive_applied - 1])
        return self.manifest.endowment

    def _clock_ms(self) -> float:
        n = self.next_active_index
        if n == 0:
            return 0.0
        prev = self.records[n - 1]
        return prev.t_response_ms + float(self.jitter_ms[n - 1])

    def payout_seed(self) -> int:
        return _derived_seed(self.manifest.seed_for("schedule", self.condition), _PAYOUT_TAG)

    # -- persistence -----------------------------------------------------

    @property
    def trials_path(self) -> Path:
        return self.directory / "trials.jsonl"

    @property
    def passive_log_path(self) -> Path:
        return self.directory / "passive.jsonl"

    def append_record(self, record: TrialRecord) -> None:
        with open(self.trials_path, "a") as fh:
            fh.write(canonical_json(record.to_json_dict()) + "\n")

    def append_passive_event(self, event: dict[str, Any]) -> None:
        with open(self.passive_log_path, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n")


def _build_session(
    session_id: str,
    manifest: SessionManifest,
    condition: Dynamic,
    seed: int,
    directory: Path,
) -> Session:
    stimuli = build_stimulus_set(condition)
    sequence = generate_passive_sequence(
        stimuli, manifest.seed_for("passive", condition)
    )
    space = build_gamble_space(stimuli, seed=manifest.seed_for("space", condition))
    schedule = make_schedule(space, seed=manifest.seed_for("schedule", condition))
    jitter_rng = np.random.default_rng(
        np.random.SeedSequence(
            [manifest.seed_for("schedule", condition), _JITTER_TAG]
        )
    )
    jitter = jitter_rng.uniform(*JITTER_RANGE_MS, size=SCHEDULE_LENGTH)
    return Session(
        session_id=session_id,
        manifest=manifest,
        condition=condition,
        seed=seed,
        directory=directory,
        stimuli=stimuli,
        sequence=sequence,
        schedule=schedule,
        jitter_ms=jitter,
        passive_wealth_path=sequence.wealth_path(stimuli),
    )


def _create_session(
    data_dir: Path, session_id: str, subject: str, condition: Dynamic, seed: int
) -> Session:
    directory = data_dir / "sessions" / session_id
    directory.mkdir(parents=True, exist_ok=True)
    manifest = derive_manifest(subject, condition, seed)
    provenance = {
        "tool": "ergodic-choice-server",
        "version": __version__,
        "session": session_id,
        "subject": subject,
        "condition": condition.value,
        "seed": seed,
        "config_hash": hashlib.sha256(
            canonical_json(
                {"subject": subject, "condition": condition.value, "seed": seed}
            ).encode()
        ).hexdigest()[:16],
    }
    write_jsonl(directory / "manifest.jsonl", manifests=[manifest], provenance=provenance)
    write_jsonl(directory / "trials.jsonl", provenance=provenance)
    session = _build_session(session_id, manifest, condition, seed, directory)
    session.passive_log_path.touch()
    return session


def _load_session(data_dir: Path, session_id: str) -> Optional[Session]:
    directory = data_dir / "sessions" / session_id
    manifest_path = directory / "manifest.jsonl"
    if not manifest_path.exists():
        return None
    parsed = read_jsonl(manifest_path)
    if not parsed.manifests or parsed.provenance is None:
        raise ValueError(f"{manifest_path}: incomplete session manifest")
    manifest = parsed.manifests[0]
    condition = Dynamic(parsed.provenance["condition"])
    seed = int(parsed.provenance["seed"])
    session = _build_session(session_id, manifest, condition, seed, directory)
    if session.trials_path.exists():
        for record in read_jsonl(session.trials_path).trials:
            session.records[record.index] = record
    if session.passive_log_path.exists():
        for line in session.passive_log_path.read_text().splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            session.passive_attempt += 1
            if event.get("outcome") == "applied":
                session.passive_applied += 1
    return session


def _next_phase(session: Session) -> str:
    return session.phase


def _descriptor(session: Session) -> dict[str, Any]:
    phase = session.phase
    base: dict[str, Any] = {
        "session": session.session_id,
        "phase": phase,
        "wealth": session.wealth,
    }
    if phase == "passive":
        position = session.passive_applied
        base.update(
            trial=session.passive_attempt,
            position=position,
            stimulus=session.sequence.stimulus_ids[position],
            window_ms=PASSIVE_WINDOW_MS,
            remaining=session.passive_total - position,
        )
    elif phase == "active":
        k = session.next_active_index
        pair = session.schedule.trials[k]
        base.update(
            trial=k,
            left=[o.id for o in pair.left.outcomes],
            right=[o.id for o in pair.right.outcomes],
            kind=pair.kind.value,
            window_ms=ACTIVE_WINDOW_MS,
            jitter_ms=float(session.jitter_ms[k]),
            remaining=SCHEDULE_LENGTH - k,
        )
    else:
        base.update(trial=None, remaining=0)
    return base


def _ack_for_record(session: Session, record: TrialRecord, duplicate: bool) -> dict[str, Any]:
    return {
        "session": session.session_id,
        "phase": "active",
        "trial": record.index,
        "accepted": True,
        "duplicate": duplicate,
        "choice": record.choice.value,
        "assigned": record.assigned_id,
        "next_phase": _next_phase(session),
    }


def _handle_passive(session: Session, body: ResponseBody) -> dict[str, Any]:
    if body.choice not in ("press", "timeout"):
        raise HTTPException(
            status_code=400,
            detail="passive trials accept choice 'press' or 'timeout'",
        )
    if body.trial in session.passive_acks:
        return {**session.passive_acks[body.trial], "duplicate": True}
    if body.trial != session.passive_attempt:
        raise HTTPException(
            status_code=409,
            detail=f"expected passive trial {session.passive_attempt}, got {body.trial}",
        )
    position = session.passive_applied
    stimulus = session.sequence.stimulus_ids[position]
    timely = (
        body.choice == "press"
        and body.rt_ms is not None
        and 0.0 < body.rt_ms <= PASSIVE_WINDOW_MS
    )
    if timely:
        session.passive_applied += 1
        ack = {
            "session": session.session_id,
            "phase": "passive",
            "trial": body.trial,
            "accepted": True,
            "requeued": False,
            "message": None,
            "wealth": session.wealth,
            "next_phase": _next_phase(session),
        }
        outcome = "applied"
    else:
        ack = {
            "session": session.session_id,
            "phase": "passive",
            "trial": body.trial,
            "accepted": False,
            "requeued": True,
            "message": LATE_PRESS_MESSAGE,
            "wealth": session.wealth,
            "next_phase": "passive",
        }
        outcome = "requeued"
    session.passive_attempt += 1
    session.passive_acks[body.trial] = ack
    session.append_passive_event(
        {
            "trial": body.trial,
            "position": position,
            "stimulus": stimulus,
            "outcome": outcome,
            "rt_ms": body.rt_ms,
        }
    )
    return ack


def _handle_active(session: Session, body: ResponseBody) -> dict[str, Any]:
    if body.choice not in ("left", "right", "timeout"):
        raise HTTPException(
            status_code=400,
            detail="active trials accept choice 'left', 'right', or 'timeout'",
        )
    expected = session.next_active_index
    if body.trial < expected:
        stored = session.records[body.trial]
        same = (
            stored.choice.value == body.choice
            and (stored.rt_ms == body.rt_ms or stored.choice is Choice.TIMEOUT)
        )
        if not same:
            raise HTTPException(
                status_code=409,
                detail=f"trial {body.trial} already recorded with a different response",
            )
        return _ack_for_record(session, stored, duplicate=True)
    if body.trial != expected:
        raise HTTPException(
            status_code=409,
            detail=f"expected active trial {expected}, got {body.trial}",
        )

    pair = session.schedule.trials[expected]
    t_start = session._clock_ms()
    late = body.rt_ms is None or not 0.0 < body.rt_ms <= ACTIVE_WINDOW_MS
    if body.choice == "timeout" or late:
        record = TrialRecord(
            subject=session.manifest.subject,
            condition=session.condition,
            index=expected,
            left_ids=tuple(o.id for o in pair.left.outcomes),
            right_ids=tuple(o.id for o in pair.right.outcomes),
            kind=pair.kind,
            choice=Choice.TIMEOUT,
            rt_ms=None,
            t_start_ms=t_start,
            t_response_ms=t_start + ACTIVE_WINDOW_MS,
            wealth=session.manifest.endowment,
            assigned_id=worst_stimulus_id(pair),
        )
    else:
        record = TrialRecord(
            subject=session.manifest.subject,
            condition=session.condition,
            index=expected,
            left_ids=tuple(o.id for o in pair.left.outcomes),
            right_ids=tuple(o.id for o in pair.right.outcomes),
            kind=pair.kind,
            choice=Choice(body.choice),
            rt_ms=body.rt_ms,
            t_start_ms=t_start,
            t_response_ms=t_start + body.rt_ms,
            wealth=session.manifest.endowment,
        )
    session.records[expected] = record
    session.append_record(record)
    return _ack_for_record(session, record, duplicate=False)


def _summary(session: Session) -> dict[str, Any]:
    payout: Optional[dict[str, Any]] = None
    if session.phase == "done":
        ordered = [session.records[i] for i in range(SCHEDULE_LENGTH)]
        result: PayoutResult = realize_payout(
            ordered, seed=session.payout_seed(), endowment=session.manifest.endowment
        )
        payout = {
            "amount": result.amount,
            "chosen_trials": list(result.chosen_indices),
            "wealth_before_clamp": result.wealth_before_clamp,
        }
    return {
        "session": session.session_id,
        "subject": session.manifest.subject,
        "condition": session.condition.value,
        "phase": session.phase,
        "wealth": session.wealth,
        "endowment": session.manifest.endowment,
        "passive_applied": session.passive_applied,
        "passive_total": session.passive_total,
        "active_recorded": len(session.records),
        "active_total": SCHEDULE_LENGTH,
        "passive_wealth": [
            float(w) for w in session.passive_wealth_path[: session.passive_applied]
        ],
        "payout": payout,
    }


def create_app(
    data_dir: str | Path,
    static_dir: Optional[str | Path] = None,
) -> FastAPI:
    """Build the session server over a data directory.

    When ``static_dir`` is given, its files are served at the root path (with
    ``index.html`` for directory requests) so the browser task and its API
    share an origin.
    """
    app = FastAPI(title="ergodic-choice session server", version=__version__)
    root = Path(data_dir)
    root.mkdir(parents=True, exist_ok=True)
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        if not _SESSION_ID.match(session_id):
            raise HTTPException(status_code=400, detail="invalid session id")
        with registry_lock:
            if session_id not in sessions:
                loaded = _load_session(root, session_id)
                if loaded is None:
                    raise HTTPException(
                        status_code=404, detail=f"unknown session {session_id!r}"
                    )
                sessions[session_id] = loaded
            return sessions[session_id]

    @app.get("/api/health")
    def health() -> dict[str, str]:
        return {"status": "ok", "version": __version__}

    @app.post("/api/session/{session_id}")
    def create_session(session_id: str, body: CreateSessionBody) -> dict[str, Any]:
        if not _SESSION_ID.match(session_id):
            raise HTTPException(status_code=400, detail="invalid session id")
        try:
            condition = Dynamic(body.condition)
        except ValueError:
            raise HTTPException(
                status_code=400, detail=f"unknown condition {body.condition!r}"
            )
        subject = body.subject if body.subject is not None else session_id
        with registry_lock:
            existing = sessions.get(session_id) or _load_session(root, session_id)
            if existing is not None:
                sessions[session_id] = existing
                same = (
                    existing.manifest.subject == subject
                    and existing.condition is condition
                    and existing.seed == body.seed
                )
                if not same:
                    raise HTTPException(
                        status_code=409,
                        detail=f"session {session_id!r} exists with different settings",
                    )
                session, created = existing, False
            else:
                session = _create_session(root, session_id, subject, condition, body.seed)
                sessions[session_id] = session
                created = True
        return {
            "session": session_id,
            "created": created,
            "subject": subject,
            "condition": condition.value,
            "phase": session.phase,
            "passive_total": session.passive_total,
            "active_total": SCHEDULE_LENGTH,
            "endowment": session.manifest.endowment,
        }

    @app.get("/api/session/{session_id}/next-trial")
    def next_trial(session_id: str) -> dict[str, Any]:
        session = get_session(session_id)
        with session.lock:
            return _descriptor(session)

    @app.post("/api/session/{session_id}/response")
    def post_response(session_id: str, body: ResponseBody) -> dict[str, Any]:
        session = get_session(session_id)
        with session.lock:
            if body.trial < 0:
                raise HTTPException(status_code=400, detail="trial index must be >= 0")
            if body.rt_ms is not None and body.rt_ms <= 0:
                raise HTTPException(
                    status_code=400, detail="rt_ms must be positive when present"
                )
            phase = session.phase
            if phase == "passive":
                return _handle_passive(session, body)
            if phase == "active":
                return _handle_active(session, body)
            if body.trial in session.records:
                return _handle_active(session, body)
            raise HTTPException(status_code=409, detail="session is complete")

    @app.get("/api/session/{session_id}/summary")
    def summary(session_id: str) -> dict[str, Any]:
        session = get_session(session_id)
        with session.lock:
            return _summary(session)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="static")

    return app
