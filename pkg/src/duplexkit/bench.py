"""Offline benchmark runner.

Scenarios are replayed on a virtual clock: chunk i's state decision lands
at (i+1)*160 ms plus whatever compute delay the backend reports, so a full
sweep takes seconds, not interaction time.  The oracle backend replays the
scenario's ground-truth states directly; acoustic backends get the timeline
rendered to synthetic PCM and sliced into chunks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .controller import DuplexController, EventLog, ResponderStub
from .ingest import CHUNK_MS, CHUNK_SAMPLES
from .interleave import DuplexState
from .metrics import (EasyTurnAccuracy, TaskMetrics, aggregate_overall,
                      score_backchannel, score_easy_turn, score_interruption,
                      score_pause_handling, score_turn_taking)
from .predictor import (EnergyVadPredictor, OraclePredictor, OracleScript,
                        Predictor, PredictorInput, RemotePredictor,
                        placeholder_chunk)
from .scenarios import ScenarioSet, ScenarioTimeline, Task, render_pcm

BACKENDS = ("oracle", "energy_vad", "remote")

#: tasks scored against session logs, with their scorer
_TASK_SCORERS = {
    Task.TURN_TAKING.value: score_turn_taking,
    Task.PAUSE_HANDLING.value: score_pause_handling,
    Task.USER_BACKCHANNEL.value: score_backchannel,
    Task.USER_INTERRUPTION.value: score_interruption,
}


@dataclass
class RunManifest:
    """Everything needed to reproduce one benchmark run."""

    scenario_dir: str
    backend: str = "oracle"
    llm_first_packet_ms: float = 0.0
    tts_first_packet_ms: float = 0.0
    speech_duration_ms: float = 5000.0
    seed: int = 0
    out_dir: Optional[str] = None
    remote_endpoint: Optional[str] = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; one of {BACKENDS}")
        if self.backend == "remote" and not self.remote_endpoint:
            raise ValueError("remote backend needs an endpoint")

    @property
    def responder(self) -> ResponderStub:
        return ResponderStub(self.llm_first_packet_ms, self.tts_first_packet_ms,
                             self.speech_duration_ms)

    def to_dict(self) -> dict:
        return {
            "scenario_dir": self.scenario_dir,
            "backend": self.backend,
            "llm_first_packet_ms": self.llm_first_packet_ms,
            "tts_first_packet_ms": self.tts_first_packet_ms,
            "speech_duration_ms": self.speech_duration_ms,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "remote_endpoint": self.remote_endpoint,
        }


def predictor_factory(manifest: RunManifest) -> Callable[[ScenarioTimeline], Predictor]:
    """Fresh single-session backend per scenario."""
    if manifest.backend == "oracle":
        return lambda scn: OraclePredictor(
            OracleScript.from_states(scn.ground_truth_states), seed=manifest.seed)
    if manifest.backend == "energy_vad":
        return lambda scn: EnergyVadPredictor()
    host, _, port = manifest.remote_endpoint.rpartition(":")
    endpoint = (host or "127.0.0.1", int(port))
    return lambda scn: RemotePredictor(endpoint)


def scenario_chunks(scenario: ScenarioTimeline, audio: Optional[np.ndarray] = None):
    """Yield one chunk per 160 ms of timeline.

    With audio, chunks carry real samples (last one zero-padded); without,
    they are placeholders for state-only backends.
    """
    for i in range(scenario.chunk_count):
        if audio is None:
            yield placeholder_chunk(i)
        else:
            block = np.zeros(CHUNK_SAMPLES, dtype=np.int16)
            piece = audio[i * CHUNK_SAMPLES:(i + 1) * CHUNK_SAMPLES]
            block[:len(piece)] = piece
            yield placeholder_chunk(i, samples=block)


def run_scenario(scenario: ScenarioTimeline, predictor: Predictor,
                 responder: ResponderStub,
                 audio: Optional[np.ndarray] = None,
                 patience_ms: Optional[float] = None) -> EventLog:
    """Drive one scenario through predictor + controller on the virtual clock."""
    controller = DuplexController(responder, patience_ms=patience_ms)
    try:
        for chunk in scenario_chunks(scenario, audio):
            out = predictor.predict(PredictorInput(chunk=chunk))
            decision_ms = chunk.end_ms + out.compute_ms
            controller.step(chunk.index, out.state, decision_ms)
    finally:
        predictor.close()
    return controller.close()


def run_task(scenario_set: ScenarioSet, manifest: RunManifest) -> tuple[list[EventLog], TaskMetrics]:
    """Replay and score one benchmark subset."""
    factory = predictor_factory(manifest)
    needs_audio = manifest.backend != "oracle"
    logs = []
    for scn in scenario_set.samples:
        audio = render_pcm(scn) if needs_audio else None
        logs.append(run_scenario(scn, factory(scn), manifest.responder, audio=audio))
    scorer = _TASK_SCORERS[scenario_set.task]
    return logs, scorer(logs, scenario_set.samples)


def easy_turn_prediction(log: EventLog, scenario: ScenarioTimeline) -> Optional[DuplexState]:
    """First complete/incomplete decision after the utterance ends."""
    boundary = scenario.user_speech_end_ms()
    for index, state in log.state_sequence():
        if (index + 1) * CHUNK_MS <= boundary:
            continue
        value = DuplexState(state)
        if value in (DuplexState.USER_COMPLETE, DuplexState.USER_INCOMPLETE):
            return value
    return None


def run_easy_turn(scenario_set: ScenarioSet, manifest: RunManifest) -> EasyTurnAccuracy:
    factory = predictor_factory(manifest)
    needs_audio = manifest.backend != "oracle"
    predictions, labels = [], []
    for scn in scenario_set.samples:
        audio = render_pcm(scn) if needs_audio else None
        log = run_scenario(scn, factory(scn), manifest.responder, audio=audio)
        predictions.append(easy_turn_prediction(log, scn))
        labels.append(DuplexState.USER_COMPLETE
                      if scn.task is Task.EASY_TURN_COMPLETE
                      else DuplexState.USER_INCOMPLETE)
    return score_easy_turn(predictions, labels)


def run_benchmark(sets: dict[str, ScenarioSet], manifest: RunManifest,
                  keep_logs: bool = False) -> dict:
    """Score every loaded subset and aggregate the overall pair.

    Returns the report dict (JSON-ready); with ``keep_logs`` each scored
    task also carries its serialized per-scenario logs.
    """
    started = time.time()
    task_metrics: list[TaskMetrics] = []
    logs_by_task: dict[str, list[str]] = {}
    easy: Optional[EasyTurnAccuracy] = None
    for name, scenario_set in sorted(sets.items()):
        if name in _TASK_SCORERS:
            logs, metrics = run_task(scenario_set, manifest)
            task_metrics.append(metrics)
            if keep_logs:
                logs_by_task[name] = [log.to_jsonl() for log in logs]
        elif name == "easy_turn" or name.startswith("easy_turn"):
            easy = run_easy_turn(scenario_set, manifest)
    report = {
        "manifest": manifest.to_dict(),
        "tasks": [m.to_dict() for m in task_metrics],
        "easy_turn": easy.to_dict() if easy else None,
        "overall": None,
        "wall_s": round(time.time() - started, 3),
    }
    try:
        report["overall"] = aggregate_overall(task_metrics).to_dict()
    except Exception:
        pass  # a run may legitimately cover only easy-turn subsets
    if keep_logs:
        report["logs"] = logs_by_task
    return report


def write_report(report: dict, out_dir) -> Path:
    """Dump report.json next to its rendered table and CSV."""
    import json

    from .metrics import render_csv, render_table

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, ensure_ascii=False, indent=1)
    name = report.get("manifest", {}).get("backend", "run")
    (out / "report.txt").write_text(render_table([(name, report)]) + "\n",
                                    encoding="utf-8")
    (out / "report.csv").write_text(render_csv([(name, report)]), encoding="utf-8")
    return out / "report.json"
