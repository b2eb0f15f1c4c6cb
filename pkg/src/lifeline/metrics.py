"""Run metrics, canonical serialization, and topology export.

Serialization is canonical (sorted keys, fixed separators) so equal runs
produce byte-identical files; the CSV view carries the same aggregate
numbers for spreadsheet use.  Topology snapshots taken during a run can
be rendered as DOT, with relay (MPR) edges styled distinctly.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from typing import Optional

METRICS_SCHEMA = "lifeline-metrics/1"


class NoSnapshot(LookupError):
    """No topology snapshot exists at or before the requested time."""


@dataclass
class DeliveryRecord:
    msg_id: int
    src: str
    dst: str
    priority: int
    created_at: int
    delivered_at: int
    hop_count: int
    deliver_node: str
    estimate: object = "unknown"

    @property
    def latency_ms(self) -> int:
        return self.delivered_at - self.created_at

    def to_json(self) -> dict:
        return {
            "msg_id": self.msg_id,
            "src": self.src,
            "dst": self.dst,
            "priority": self.priority,
            "created_at": self.created_at,
            "delivered_at": self.delivered_at,
            "latency_ms": self.latency_ms,
            "hop_count": self.hop_count,
            "deliver_node": self.deliver_node,
            "estimate": self.estimate,
        }


@dataclass
class RunMetrics:
    scenario_name: str
    seed: int
    duration_ms: int
    injected: int = 0
    deliveries: list[DeliveryRecord] = field(default_factory=list)
    dropped: dict[str, int] = field(default_factory=dict)
    ignored: int = 0
    send_errors: int = 0
    recv_errors: int = 0
    backed_up: dict[str, int] = field(default_factory=dict)
    persisted: dict[str, int] = field(default_factory=dict)
    handoff_flushed: int = 0
    handoff_persisted: int = 0
    handoff_rejected: int = 0
    lost_to_dead_node: int = 0
    boot_decisions: list[dict] = field(default_factory=list)
    roles: dict[str, str] = field(default_factory=dict)
    deaths: dict[str, int] = field(default_factory=dict)
    energy: dict[str, dict[str, float]] = field(default_factory=dict)
    battery_percent: dict[str, float] = field(default_factory=dict)
    conservation_ok: bool = True
    snapshots: list[dict] = field(default_factory=list)

    # -- aggregate views ------------------------------------------------

    @property
    def delivered(self) -> int:
        return len(self.deliveries)

    def delivery_ratio(self) -> float:
        return self.delivered / self.injected if self.injected else 0.0

    def mean_latency_ms(self) -> Optional[float]:
        if not self.deliveries:
            return None
        return statistics.fmean(d.latency_ms for d in self.deliveries)

    def latency_by_priority(self) -> dict[int, dict[str, float]]:
        grouped: dict[int, list[int]] = {}
        for d in self.deliveries:
            grouped.setdefault(d.priority, []).append(d.latency_ms)
        return {
            p: {
                "count": len(vals),
                "mean_ms": statistics.fmean(vals),
                "min_ms": min(vals),
                "max_ms": max(vals),
            }
            for p, vals in sorted(grouped.items())
        }

    def to_json_dict(self) -> dict:
        return {
            "schema": METRICS_SCHEMA,
            "scenario": self.scenario_name,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "injected": self.injected,
            "delivered": self.delivered,
            "delivery_ratio": self.delivery_ratio(),
            "mean_latency_ms": self.mean_latency_ms(),
            "latency_by_priority": {
                str(p): stats for p, stats in self.latency_by_priority().items()
            },
            "dropped": dict(sorted(self.dropped.items())),
            "ignored": self.ignored,
            "send_errors": self.send_errors,
            "recv_errors": self.recv_errors,
            "backed_up": dict(sorted(self.backed_up.items())),
            "persisted": dict(sorted(self.persisted.items())),
            "handoff": {
                "flushed": self.handoff_flushed,
                "persisted": self.handoff_persisted,
                "rejected": self.handoff_rejected,
            },
            "lost_to_dead_node": self.lost_to_dead_node,
            "boot_decisions": self.boot_decisions,
            "roles": dict(sorted(self.roles.items())),
            "deaths": dict(sorted(self.deaths.items())),
            "energy": {
                node: dict(sorted(ledger.items()))
                for node, ledger in sorted(self.energy.items())
            },
            "battery_percent": dict(sorted(self.battery_percent.items())),
            "conservation_ok": self.conservation_ok,
            "deliveries": [d.to_json() for d in self.deliveries],
            "snapshots": self.snapshots,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))

    def to_csv(self) -> str:
        """Aggregate numbers in a flat metric,key,value table."""
        rows = [("metric", "key", "value")]
        doc = self.to_json_dict()
        for name in ("injected", "delivered", "delivery_ratio",
                     "mean_latency_ms", "ignored", "send_errors",
                     "recv_errors", "lost_to_dead_node"):
            rows.append((name, "", _csv_num(doc[name])))
        for p, stats in sorted(self.latency_by_priority().items()):
            for stat_name in ("count", "mean_ms", "min_ms", "max_ms"):
                rows.append((f"latency_p{p}", stat_name, _csv_num(stats[stat_name])))
        for reason, count in sorted(self.dropped.items()):
            rows.append(("dropped", reason, str(count)))
        for node, count in sorted(self.persisted.items()):
            rows.append(("persisted", node, str(count)))
        for name in ("flushed", "persisted", "rejected"):
            rows.append(("handoff", name, str(doc["handoff"][name])))
        for node, at in sorted(self.deaths.items()):
            rows.append(("death_ms", node, str(at)))
        return "\n".join(",".join(row) for row in rows) + "\n"


def _csv_num(value) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def validate_metrics_json(doc: dict) -> None:
    """Check the serialized metrics document against the v1 schema."""
    def fail(path, why):
        raise ValueError(f"{path}: {why}")

    def expect(path, value, kinds):
        if not isinstance(value, kinds):
            fail(path, f"expected {kinds}, got {type(value).__name__}")

    if doc.get("schema") != METRICS_SCHEMA:
        fail("schema", f"expected {METRICS_SCHEMA!r}")
    for key, kinds in (
        ("scenario", str), ("seed", int), ("duration_ms", int),
        ("injected", int), ("delivered", int), ("delivery_ratio", (int, float)),
        ("dropped", dict), ("ignored", int), ("send_errors", int),
        ("recv_errors", int), ("backed_up", dict), ("persisted", dict),
        ("handoff", dict), ("boot_decisions", list), ("roles", dict),
        ("deaths", dict),
        ("energy", dict), ("battery_percent", dict),
        ("conservation_ok", bool), ("deliveries", list), ("snapshots", list),
    ):
        if key not in doc:
            fail(key, "missing")
        expect(key, doc[key], kinds)
    if doc["mean_latency_ms"] is not None:
        expect("mean_latency_ms", doc["mean_latency_ms"], (int, float))
    for i, d in enumerate(doc["deliveries"]):
        for key in ("msg_id", "src", "dst", "priority", "created_at",
                    "delivered_at", "latency_ms", "hop_count",
                    "deliver_node", "estimate"):
            if key not in d:
                fail(f"deliveries[{i}].{key}", "missing")
    for i, snap in enumerate(doc["snapshots"]):
        for key in ("t", "nodes", "links", "mpr"):
            if key not in snap:
                fail(f"snapshots[{i}].{key}", "missing")


def export_topology(metrics: RunMetrics, t: int) -> str:
    """DOT text of the latest snapshot at or before t."""
    chosen = None
    for snap in metrics.snapshots:
        if snap["t"] <= t:
            chosen = snap
    if chosen is None:
        raise NoSnapshot(f"no topology snapshot at or before {t} ms")

    lines = ["graph lifeline {", f'  label="t={chosen["t"]}ms";']
    mpr_map = {node: set(relays) for node, relays in chosen["mpr"].items()}
    for node in sorted(chosen["nodes"], key=lambda n: n["node"]):
        battery = node.get("battery_percent")
        battery_label = "mains" if battery is None else f"{battery:.0f}%"
        label = f'{node["node"]}\\n{node["kind"]} {battery_label}'
        shape = "box" if node["kind"] == "station" else "ellipse"
        lines.append(f'  "{node["node"]}" [label="{label}", shape={shape}];')
    for a, b in sorted(tuple(pair) for pair in chosen["links"]):
        relay = b in mpr_map.get(a, ()) or a in mpr_map.get(b, ())
        style = ' [style=bold, color="red"]' if relay else ""
        lines.append(f'  "{a}" -- "{b}"{style};')
    lines.append("}")
    return "\n".join(lines) + "\n"
