"""Listening-study service: serves paired-audio trials, enforces playback
gating server-side, persists responses to an append-only event log, and
computes per-system binary-criterion statistics.

State lives in memory and is rebuilt by replaying the event log at startup.
Audio files are served through random tokens so URLs never reveal which
system produced a clip.
"""

from __future__ import annotations

import csv
import io
import json
import random
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse

from .stats import binary_criterion_stats

QUESTIONS = (
    {"id": "q1_rhythm",
     "text": "Does Source 2 exhibit any unintended change in rhythm "
             "compared to Source 1?",
     "options": [{"label": "No unintended change", "value": True},
                 {"label": "Rhythm changed", "value": False}]},
    {"id": "q2_timbre",
     "text": "Is each drum sound in Source 1 consistently mapped to a "
             "vocal percussion sound in Source 2?",
     "options": [{"label": "Mapping consistent", "value": True},
                 {"label": "None", "value": False}]},
    {"id": "q3_naturalness",
     "text": "Does Source 2 sound closer to vocal percussion than to the "
             "original drums?",
     "options": [{"label": "Closer to vocal percussion", "value": True},
                 {"label": "Closer to drum", "value": False}]},
)

CRITERIA = ("q1_rhythm", "q2_timbre", "q3_naturalness")

# answers that must be justified with a free-text comment
COMMENT_REQUIRED_WHEN_FALSE = ("q2_timbre", "q3_naturalness")


class StudyError(Exception):
    def __init__(self, code: str, reason: str, status: int = 400):
        super().__init__(reason)
        self.code = code
        self.reason = reason
        self.status = status


@dataclass(frozen=True)
class StudyConfig:
    systems: tuple[str, ...]
    test_cases: tuple[dict, ...]  # {name, drum, sources: {system: path}}
    confidence_level: float = 0.99
    audio_root: str = "."

    def __post_init__(self):
        if not self.systems:
            raise ValueError("at least one system required")
        if not self.test_cases:
            raise ValueError("at least one test case required")
        if not 0 < self.confidence_level < 1:
            raise ValueError("confidence_level must be in (0, 1)")
        for case in self.test_cases:
            missing = set(self.systems) - set(case.get("sources", {}))
            if missing:
                raise ValueError(
                    f"case {case.get('name')} lacks sources for {sorted(missing)}")

    @property
    def pairs_per_participant(self) -> int:
        return len(self.systems) * len(self.test_cases)


@dataclass
class Trial:
    trial_id: str
    study_id: str
    participant: str
    system: str
    case: str
    source1_token: str
    source2_token: str
    playback_done: set = field(default_factory=set)  # subset of {1, 2}
    response: dict | None = None
    submission_token: str | None = None


@dataclass
class Study:
    study_id: str
    config: StudyConfig
    participants: dict = field(default_factory=dict)  # pid -> [(system, case)]
    trials: dict = field(default_factory=dict)  # tid -> Trial
    responses: list = field(default_factory=list)  # accepted, in order


def trial_order(study_id: str, participant: str, config: StudyConfig):
    """Deterministic per-participant shuffle of all (system, case) pairs."""
    pairs = [(s, c["name"]) for s in config.systems for c in config.test_cases]
    random.Random(f"{study_id}:{participant}").shuffle(pairs)
    return pairs


def compute_stats(responses: list[dict], config: StudyConfig) -> dict:
    """Per-system, per-criterion success stats with exact binomial CIs."""
    if not responses:
        raise StudyError("empty", "no responses recorded")
    out = {"systems": {}, "notes": []}
    for system in config.systems:
        rows = [r for r in responses if r["system"] == system]
        if not rows:
            out["notes"].append(f"no responses for system {system}")
            continue
        per = {}
        for criterion in CRITERIA:
            k = sum(1 for r in rows if r[criterion])
            s = binary_criterion_stats(criterion, k, len(rows),
                                       config.confidence_level)
            per[criterion] = {
                "criterion": criterion, "successes": s.successes,
                "total": s.total, "mean": s.mean,
                "ci_low": s.ci_low, "ci_high": s.ci_high,
                "significant_vs_chance": s.significant_vs_chance,
            }
        out["systems"][system] = per
    return out


EXPORT_COLUMNS = ("participant", "system", "test_case", "q1_rhythm",
                  "q2_timbre", "q3_naturalness", "comment", "timestamp")


def export_csv(responses: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXPORT_COLUMNS)
    for r in responses:
        writer.writerow([r["participant"], r["system"], r["test_case"],
                         int(r["q1_rhythm"]), int(r["q2_timbre"]),
                         int(r["q3_naturalness"]), r["comment"],
                         r["timestamp"]])
    return buf.getvalue()


def export_jsonl(responses: list[dict], config: StudyConfig) -> str:
    lines = [json.dumps({"type": "response",
                         **{k: r[k] for k in EXPORT_COLUMNS}},
                        sort_keys=True) for r in responses]
    if responses:
        lines.append(json.dumps(
            {"type": "stats", **compute_stats(responses, config)},
            sort_keys=True))
    return "\n".join(lines) + "\n"


class StudyService:
    """All study state plus the append-only event log behind it."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "events.jsonl"
        self.studies: dict[str, Study] = {}
        self.audio_files: dict[str, Path] = {}  # token -> path
        self.trial_index: dict[str, str] = {}  # tid -> study_id
        self._lock = threading.Lock()
        self._replay()

    # event log -----------------------------------------------------------

    def _append(self, event: dict):
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()

    def _replay(self):
        if not self.log_path.exists():
            return
        with open(self.log_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _apply(self, event: dict):
        kind = event["event"]
        if kind == "study_created":
            cfg = StudyConfig(systems=tuple(event["systems"]),
                              test_cases=tuple(event["test_cases"]),
                              confidence_level=event["confidence_level"],
                              audio_root=event["audio_root"])
            self.studies[event["study_id"]] = Study(event["study_id"], cfg)
        elif kind == "participant_registered":
            study = self.studies[event["study_id"]]
            study.participants[event["participant"]] = trial_order(
                study.study_id, event["participant"], study.config)
        elif kind == "trial_issued":
            study = self.studies[event["study_id"]]
            trial = Trial(trial_id=event["trial_id"],
                          study_id=event["study_id"],
                          participant=event["participant"],
                          system=event["system"], case=event["case"],
                          source1_token=event["source1_token"],
                          source2_token=event["source2_token"])
            study.trials[trial.trial_id] = trial
            self.trial_index[trial.trial_id] = study.study_id
            root = Path(study.config.audio_root)
            self.audio_files[trial.source1_token] = root / event["source1_path"]
            self.audio_files[trial.source2_token] = root / event["source2_path"]
        elif kind == "playback_complete":
            trial = self._trial(event["trial_id"])
            trial.playback_done.add(event["source"])
        elif kind == "response_accepted":
            trial = self._trial(event["trial_id"])
            trial.response = event["response"]
            trial.submission_token = event["response"].get("submission_token")
            self.studies[trial.study_id].responses.append(event["response"])

    def _record(self, event: dict):
        self._append(event)
        self._apply(event)

    # operations ----------------------------------------------------------

    def _study(self, study_id: str) -> Study:
        try:
            return self.studies[study_id]
        except KeyError:
            raise StudyError("unknown_study", f"no study {study_id}", 404)

    def _trial(self, trial_id: str) -> Trial:
        study_id = self.trial_index.get(trial_id)
        if study_id is None:
            raise StudyError("unknown_trial", f"no trial {trial_id}", 404)
        return self.studies[study_id].trials[trial_id]

    def create_study(self, body: dict) -> dict:
        cfg = StudyConfig(
            systems=tuple(body["systems"]),
            test_cases=tuple(body["test_cases"]),
            confidence_level=body.get("confidence_level", 0.99),
            audio_root=body.get("audio_root", "."))
        study_id = secrets.token_hex(8)
        with self._lock:
            self._record({"event": "study_created", "study_id": study_id,
                          "systems": list(cfg.systems),
                          "test_cases": list(cfg.test_cases),
                          "confidence_level": cfg.confidence_level,
                          "audio_root": cfg.audio_root})
        return {"study_id": study_id,
                "pairs_per_participant": cfg.pairs_per_participant}

    def register_participant(self, study_id: str, body: dict) -> dict:
        study = self._study(study_id)
        participant = body.get("participant_id") or secrets.token_hex(6)
        with self._lock:
            if participant in study.participants:
                raise StudyError("duplicate", "participant already registered")
            self._record({"event": "participant_registered",
                          "study_id": study_id, "participant": participant})
        return {"participant_id": participant,
                "total_trials": study.config.pairs_per_participant,
                "questions": QUESTIONS}

    def next_trial(self, study_id: str, participant: str) -> dict:
        study = self._study(study_id)
        if participant not in study.participants:
            raise StudyError("unknown_participant",
                             f"participant {participant} not registered", 404)
        order = study.participants[participant]
        answered = sum(1 for t in study.trials.values()
                       if t.participant == participant and t.response)
        with self._lock:
            # an already-issued, unanswered trial is returned again verbatim
            for trial in study.trials.values():
                if trial.participant == participant and trial.response is None:
                    return self._trial_view(trial, answered, study)
            done = {(t.system, t.case) for t in study.trials.values()
                    if t.participant == participant and t.response}
            remaining = [p for p in order if p not in done]
            if not remaining:
                return {"complete": True, "answered": answered,
                        "total": study.config.pairs_per_participant}
            system, case_name = remaining[0]
            case = next(c for c in study.config.test_cases
                        if c["name"] == case_name)
            trial_id = secrets.token_hex(8)
            tok1, tok2 = secrets.token_hex(12), secrets.token_hex(12)
            self._record({"event": "trial_issued", "study_id": study_id,
                          "trial_id": trial_id, "participant": participant,
                          "system": system, "case": case_name,
                          "source1_token": tok1, "source2_token": tok2,
                          "source1_path": case["drum"],
                          "source2_path": case["sources"][system]})
            return self._trial_view(study.trials[trial_id], answered, study)

    def _trial_view(self, trial: Trial, answered: int, study: Study) -> dict:
        return {"trial_id": trial.trial_id,
                "source1_url": f"/audio/{trial.source1_token}.wav",
                "source2_url": f"/audio/{trial.source2_token}.wav",
                "questions": QUESTIONS,
                "answered": answered,
                "total": study.config.pairs_per_participant}

    def playback_complete(self, trial_id: str, body: dict) -> dict:
        trial = self._trial(trial_id)
        source = body.get("source")
        if source not in (1, 2):
            raise StudyError("bad_source", "source must be 1 or 2")
        with self._lock:
            if source not in trial.playback_done:
                self._record({"event": "playback_complete",
                              "trial_id": trial_id, "source": source})
        return {"ok": True, "playback_done": sorted(trial.playback_done)}

    def submit_response(self, trial_id: str, body: dict) -> dict:
        trial = self._trial(trial_id)
        with self._lock:
            if trial.response is not None:
                token = body.get("submission_token")
                if token and token == trial.submission_token:
                    return {"accepted": True, "duplicate": True}
                raise StudyError("duplicate", "duplicate submission", 409)
            if trial.playback_done != {1, 2}:
                raise StudyError("playback_incomplete", "playback incomplete")
            missing = [q for q in CRITERIA if not isinstance(body.get(q), bool)]
            if missing:
                raise StudyError("missing_answer",
                                 f"missing answers: {missing}")
            comment = (body.get("comment") or "").strip()
            needs_comment = any(body[q] is False
                                for q in COMMENT_REQUIRED_WHEN_FALSE)
            if needs_comment and not comment:
                raise StudyError("comment_required", "comment required")
            response = {
                "participant": trial.participant, "system": trial.system,
                "test_case": trial.case,
                "q1_rhythm": body["q1_rhythm"],
                "q2_timbre": body["q2_timbre"],
                "q3_naturalness": body["q3_naturalness"],
                "comment": comment, "playback_complete": True,
                "timestamp": body.get("timestamp", time.time()),
                "submission_token": body.get("submission_token"),
            }
            # durably append before acknowledging
            self._record({"event": "response_accepted", "trial_id": trial_id,
                          "response": response})
        return {"accepted": True}

    def stats(self, study_id: str) -> dict:
        study = self._study(study_id)
        if not study.responses:
            raise StudyError("empty", "no responses recorded")
        return compute_stats(study.responses, study.config)

    def export(self, study_id: str, fmt: str) -> str:
        study = self._study(study_id)
        if fmt == "csv":
            return export_csv(study.responses)
        if fmt == "jsonl":
            return export_jsonl(study.responses, study.config)
        raise StudyError("bad_format", f"unknown format {fmt}")

    def audio_path(self, token: str) -> Path:
        path = self.audio_files.get(token)
        if path is None or not path.exists():
            raise StudyError("unknown_audio", "no such audio", 404)
        return path


def create_app(data_dir) -> FastAPI:
    service = StudyService(data_dir)
    app = FastAPI(title="listening study service")
    app.state.service = service

    @app.exception_handler(StudyError)
    async def study_error(request, exc: StudyError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "reason": exc.reason})

    @app.post("/api/studies")
    async def create_study(body: dict):
        try:
            return service.create_study(body)
        except (KeyError, ValueError) as exc:
            raise StudyError("bad_config", str(exc))

    @app.post("/api/studies/{study_id}/participants")
    async def register(study_id: str, body: dict | None = None):
        return service.register_participant(study_id, body or {})

    @app.get("/api/studies/{study_id}/trials/next")
    async def next_trial(study_id: str, participant: str):
        return service.next_trial(study_id, participant)

    @app.post("/api/trials/{trial_id}/playback-complete")
    async def playback(trial_id: str, body: dict):
        return service.playback_complete(trial_id, body)

    @app.post("/api/trials/{trial_id}/response")
    async def respond(trial_id: str, body: dict):
        return service.submit_response(trial_id, body)

    @app.get("/api/studies/{study_id}/stats")
    async def stats(study_id: str):
        return service.stats(study_id)

    @app.get("/api/studies/{study_id}/export")
    async def export(study_id: str, format: str = "csv"):
        text = service.export(study_id, format)
        media = "text/csv" if format == "csv" else "application/x-ndjson"
        return PlainTextResponse(text, media_type=media)

    @app.get("/audio/{token}.wav")
    async def audio(token: str):
        return FileResponse(service.audio_path(token), media_type="audio/wav")

    return app
