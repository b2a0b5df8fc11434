"""Route completion, infraction penalty and driving score aggregation."""

import math
from collections import Counter
from dataclasses import dataclass, field

from .infractions import KINDS

DEFAULT_PENALTIES = {
    "collision_pedestrian": 0.50,
    "collision_vehicle": 0.60,
    "collision_layout": 0.65,
    "red_light": 0.70,
    "stop_sign": 0.80,
}


def penalty_table(overrides=None):
    """Coefficient per infraction kind; kinds without a coefficient cost nothing (1.0)."""
    table = {k: DEFAULT_PENALTIES.get(k, 1.0) for k in KINDS}
    for k, v in (overrides or {}).items():
        if k not in table:
            raise ValueError(f"unknown infraction kind {k!r}")
        if not 0.0 < v <= 1.0:
            raise ValueError(f"penalty coefficient for {k} must lie in (0, 1], got {v}")
        table[k] = float(v)
    return table


def infraction_penalty(events, penalties=None):
    table = penalty_table(penalties)
    ip = 1.0
    for ev in events:
        ip *= table[ev.kind]
    return ip


def episode_scores(completion, events, penalties=None):
    """(RC %, IP, DS %) for one episode; DS is exactly RC * IP."""
    if not 0.0 <= completion <= 1.0:
        raise ValueError("completion must lie in [0, 1]")
    rc = 100.0 * completion
    ip = infraction_penalty(events, penalties)
    return rc, ip, rc * ip


@dataclass
class ScoreReport:
    rc: float
    ip: float
    ds: float
    per_episode: list
    counts: dict
    km: float
    per_km: dict = field(default_factory=dict)

    def to_dict(self):
        return {"rc": self.rc, "ip": self.ip, "ds": self.ds, "km": self.km, "counts": dict(self.counts),
                "per_km": dict(self.per_km),
                "per_episode": [{"rc": r, "ip": i, "ds": d} for r, i, d in self.per_episode]}


def score(records, penalties=None):
    """Aggregate episode records (anything with ``completion``, ``events`` and ``km``).

    Benchmark values are arithmetic means over episodes.  Per-km rates are
    ``None`` when no distance was driven.
    """
    records = list(records)
    if not records:
        raise ValueError("score needs at least one episode")
    per = [episode_scores(r.completion, r.events, penalties) for r in records]
    n = len(per)
    rc = math.fsum(p[0] for p in per) / n
    ip = math.fsum(p[1] for p in per) / n
    ds = math.fsum(p[2] for p in per) / n
    counts = Counter({k: 0 for k in KINDS})
    for r in records:
        counts.update(ev.kind for ev in r.events)
    km = math.fsum(r.km for r in records)
    per_km = {k: (counts[k] / km if km > 0 else None) for k in KINDS}
    return ScoreReport(rc, ip, ds, per, dict(counts), km, per_km)
