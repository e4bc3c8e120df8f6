"""Benchmark metrics over session event logs.

Scoring is listener-centric: turn-taking, pause and interruption responses
are attributed by *audible onset* (action time plus the responder stub's
first-packet delays), not by the internal decision time.  Missing metrics
stay absent (rendered as "-"), they are never imputed, and aggregation
simply skips them.

Overall score arithmetic: the accuracy side averages 1-TOR for pause
handling with turn-taking TOR, resume rate, interruption TOR and respond
rate; the latency side averages every response latency and stop latency
present.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .controller import EventLog
from .interleave import DuplexState
from .scenarios import ScenarioTimeline, Task


class LogScenarioMismatch(ValueError):
    """Log and scenario lists must pair up one-to-one and be nonempty."""


class NoTerms(ValueError):
    """Aggregation needs at least one accuracy and one latency term."""


class LengthMismatch(ValueError):
    """Predictions and labels must pair up."""


@dataclass(frozen=True)
class TaskMetrics:
    """One task's populated metrics; unused fields stay None."""

    task: str
    tor: Optional[float] = None
    rl_s: Optional[float] = None
    rsr: Optional[float] = None
    rpr: Optional[float] = None
    sl_s: Optional[float] = None

    def __post_init__(self):
        for name in ("tor", "rsr", "rpr"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a fraction, got {v}")
        for name in ("rl_s", "sl_s"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")

    def to_dict(self) -> dict:
        return {"task": self.task, "tor": self.tor, "rl_s": self.rl_s,
                "rsr": self.rsr, "rpr": self.rpr, "sl_s": self.sl_s}

    @classmethod
    def from_dict(cls, data: dict) -> "TaskMetrics":
        return cls(task=data["task"], tor=data.get("tor"), rl_s=data.get("rl_s"),
                   rsr=data.get("rsr"), rpr=data.get("rpr"), sl_s=data.get("sl_s"))


@dataclass(frozen=True)
class OverallScore:
    acc: float
    latency_s: float
    contributing_terms: tuple[tuple[str, float], ...]

    def to_dict(self) -> dict:
        return {"acc": self.acc, "latency_s": self.latency_s,
                "contributing_terms": [list(t) for t in self.contributing_terms]}


@dataclass(frozen=True)
class EasyTurnAccuracy:
    acc_complete: float
    acc_incomplete: float

    @property
    def avg(self) -> float:
        return (self.acc_complete + self.acc_incomplete) / 2.0

    def to_dict(self) -> dict:
        return {"acc_complete": self.acc_complete,
                "acc_incomplete": self.acc_incomplete, "avg": self.avg}


# -- event log accessors --------------------------------------------------


def audible_onsets(log: EventLog) -> list[float]:
    return [e["t_ms"] for e in log.of_type("audible_onset")]


def stop_times(log: EventLog) -> list[float]:
    return [e["t_ms"] for e in log.of_type("audible_offset")
            if e["detail"].get("reason") == "stopped"]


def audible_intervals(log: EventLog) -> list[tuple[float, float]]:
    """Paired (onset, offset) spans of assistant speech."""
    onsets = {e["detail"]["response"]: e["t_ms"] for e in log.of_type("audible_onset")}
    offsets = {e["detail"]["response"]: e["t_ms"] for e in log.of_type("audible_offset")}
    return [(t, offsets[seq]) for seq, t in sorted(onsets.items()) if seq in offsets]


def _paired(logs: Sequence[EventLog],
            scenarios: Sequence[ScenarioTimeline]) -> list[tuple[EventLog, ScenarioTimeline]]:
    if not scenarios or len(logs) != len(scenarios):
        raise LogScenarioMismatch(
            f"{len(logs)} logs for {len(scenarios)} scenarios")
    return list(zip(logs, scenarios))


def _mean(values: list[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


# -- per-task scorers ------------------------------------------------------


def score_turn_taking(logs: Sequence[EventLog],
                      scenarios: Sequence[ScenarioTimeline]) -> TaskMetrics:
    """TOR: share of scenarios whose response turns audible inside the
    post-speech silence; RL: mean speech-end-to-onset delay over successes."""
    hits = 0
    delays = []
    for log, scn in _paired(logs, scenarios):
        end = scn.user_speech_end_ms()
        window_end = scn.total_duration_ms
        onset = next((t for t in audible_onsets(log) if end < t <= window_end), None)
        if onset is not None:
            hits += 1
            delays.append((onset - end) / 1000.0)
    return TaskMetrics(task=Task.TURN_TAKING.value, tor=hits / len(scenarios),
                       rl_s=_mean(delays))


def score_pause_handling(logs: Sequence[EventLog],
                         scenarios: Sequence[ScenarioTimeline]) -> TaskMetrics:
    """TOR (lower is better): share of scenarios where a response turns
    audible inside a pause the user had not finished."""
    hits = 0
    for log, scn in _paired(logs, scenarios):
        pauses = scn.pause_intervals()
        if any(lo <= t < hi for t in audible_onsets(log) for lo, hi in pauses):
            hits += 1
    return TaskMetrics(task=Task.PAUSE_HANDLING.value, tor=hits / len(scenarios))


def score_backchannel(logs: Sequence[EventLog],
                      scenarios: Sequence[ScenarioTimeline]) -> TaskMetrics:
    """RsR: share of scenarios whose assistant speech runs uninterrupted
    across the backchannel window."""
    resumed = 0
    for log, scn in _paired(logs, scenarios):
        window = scn.backchannel_interval()
        if window is None:
            raise LogScenarioMismatch(f"{scn.id}: no backchannel segment")
        lo, hi = window
        covers = any(on <= lo and off >= hi for on, off in audible_intervals(log))
        stopped = any(lo <= t < hi for t in stop_times(log))
        if covers and not stopped:
            resumed += 1
    return TaskMetrics(task=Task.USER_BACKCHANNEL.value, rsr=resumed / len(scenarios))


def score_interruption(logs: Sequence[EventLog],
                       scenarios: Sequence[ScenarioTimeline]) -> TaskMetrics:
    """TOR: responded after the interruption; RpR: stopped during it, then
    responded; SL: interruption onset to speech stop; RL: interruption end
    to audible response onset."""
    responded = 0
    stopped_then_responded = 0
    stop_delays = []
    response_delays = []
    for log, scn in _paired(logs, scenarios):
        window = scn.interruption_interval()
        if window is None:
            raise LogScenarioMismatch(f"{scn.id}: no interrupting segment")
        lo, hi = window
        onset = next((t for t in audible_onsets(log) if t >= hi), None)
        stop = next((t for t in stop_times(log) if lo <= t < hi), None)
        if onset is not None:
            responded += 1
            response_delays.append((onset - hi) / 1000.0)
        if stop is not None:
            stop_delays.append((stop - lo) / 1000.0)
            if onset is not None:
                stopped_then_responded += 1
    n = len(scenarios)
    return TaskMetrics(task=Task.USER_INTERRUPTION.value,
                       tor=responded / n, rpr=stopped_then_responded / n,
                       sl_s=_mean(stop_delays), rl_s=_mean(response_delays))


def score_easy_turn(predictions: Sequence, labels: Sequence[DuplexState]) -> EasyTurnAccuracy:
    """Per-category accuracy of complete/incomplete decisions plus their
    unweighted mean; ``predictions`` may contain None for no decision."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(labels)} labels")
    buckets = {DuplexState.USER_COMPLETE: [0, 0], DuplexState.USER_INCOMPLETE: [0, 0]}
    for pred, label in zip(predictions, labels):
        if label not in buckets:
            raise LengthMismatch(f"labels must be complete/incomplete, got {label}")
        buckets[label][1] += 1
        if pred == label:
            buckets[label][0] += 1
    for label, (_, total) in buckets.items():
        if total == 0:
            raise LengthMismatch(f"no samples labeled {label.value}")
    return EasyTurnAccuracy(
        acc_complete=buckets[DuplexState.USER_COMPLETE][0]
        / buckets[DuplexState.USER_COMPLETE][1],
        acc_incomplete=buckets[DuplexState.USER_INCOMPLETE][0]
        / buckets[DuplexState.USER_INCOMPLETE][1])


# -- aggregation -----------------------------------------------------------


def aggregate_overall(per_task: Iterable[TaskMetrics]) -> OverallScore:
    """Fold task metrics into the (accuracy, latency) overall pair.

    TOR counts positively for turn-taking and interruption, inverted for
    pause handling.  A task may appear more than once (e.g. interruption
    metrics reported under two protocol variants); every populated field
    contributes one term, missing fields are skipped.
    """
    acc_terms: list[tuple[str, float]] = []
    lat_terms: list[tuple[str, float]] = []
    for m in per_task:
        if m.tor is not None:
            if m.task == Task.PAUSE_HANDLING.value:
                acc_terms.append((f"{m.task}.1-tor", 1.0 - m.tor))
            elif m.task in (Task.TURN_TAKING.value, Task.USER_INTERRUPTION.value):
                acc_terms.append((f"{m.task}.tor", m.tor))
        if m.rsr is not None:
            acc_terms.append((f"{m.task}.rsr", m.rsr))
        if m.rpr is not None:
            acc_terms.append((f"{m.task}.rpr", m.rpr))
        if m.rl_s is not None:
            lat_terms.append((f"{m.task}.rl", m.rl_s))
        if m.sl_s is not None:
            lat_terms.append((f"{m.task}.sl", m.sl_s))
    if not acc_terms or not lat_terms:
        raise NoTerms("need at least one accuracy term and one latency term")
    acc = sum(v for _, v in acc_terms) / len(acc_terms)
    latency = sum(v for _, v in lat_terms) / len(lat_terms)
    terms = tuple((f"acc:{n}", v) for n, v in acc_terms)
    terms += tuple((f"lat:{n}", v) for n, v in lat_terms)
    return OverallScore(acc=acc, latency_s=latency, contributing_terms=terms)


# -- report rendering ------------------------------------------------------

_COLUMNS = [
    ("PH TOR", Task.PAUSE_HANDLING.value, "tor"),
    ("TT TOR", Task.TURN_TAKING.value, "tor"),
    ("TT RL(s)", Task.TURN_TAKING.value, "rl_s"),
    ("RsR", Task.USER_BACKCHANNEL.value, "rsr"),
    ("UI TOR", Task.USER_INTERRUPTION.value, "tor"),
    ("UI RpR", Task.USER_INTERRUPTION.value, "rpr"),
    ("UI SL(s)", Task.USER_INTERRUPTION.value, "sl_s"),
    ("UI RL(s)", Task.USER_INTERRUPTION.value, "rl_s"),
]


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.3f}"


def _cells(report: dict) -> list[str]:
    tasks = {t["task"]: t for t in report.get("tasks", [])}
    row = [_fmt(tasks.get(task, {}).get(field_name))
           for _, task, field_name in _COLUMNS]
    overall = report.get("overall") or {}
    row.append(_fmt(overall.get("acc")))
    row.append(_fmt(overall.get("latency_s")))
    easy = report.get("easy_turn") or {}
    row.append(_fmt(easy.get("avg")))
    return row


def render_table(reports: Sequence[tuple[str, dict]]) -> str:
    """Fixed-width comparison table, one row per run, "-" for absent."""
    headers = ["Run"] + [c[0] for c in _COLUMNS] + ["ACC", "Latency(s)", "EasyTurn"]
    rows = [[name] + _cells(rep) for name, rep in reports]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def line(cells):
        return "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


def render_csv(reports: Sequence[tuple[str, dict]]) -> str:
    """Same table as delimited output (header + one line per run)."""
    headers = ["run"] + [c[0].lower().replace(" ", "_").replace("(s)", "_s")
                         for c in _COLUMNS] + ["overall_acc", "overall_latency_s",
                                               "easy_turn_avg"]
    lines = [",".join(headers)]
    for name, rep in reports:
        lines.append(",".join([name] + _cells(rep)))
    return "\n".join(lines) + "\n"
