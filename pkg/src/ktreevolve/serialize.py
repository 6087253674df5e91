"""Reproducible JSON/CSV serialization.

Numbers are rendered with 17 significant digits so that files round-trip
bit-exactly; manifests embed the full run configuration (no timestamps), so
re-running a manifest reproduces its outputs byte for byte.
"""

from __future__ import annotations

import io
import json
from typing import Optional, Union

import numpy as np

from .evolution import DegenerationEvent, EvolutionConfig, Trajectory
from .partition import IntervalPartition
from .trees import InternalRef, KTree, LeafRef, TreeShape, shape_text

__all__ = [
    "TOOL_VERSION",
    "dumps",
    "tree_to_obj",
    "tree_from_obj",
    "trajectory_to_obj",
    "manifest",
    "trajectory_csv",
]

TOOL_VERSION = "0.1.0"


def _render(value, out: list):
    if isinstance(value, dict):
        out.append("{")
        for idx, (k, v) in enumerate(value.items()):
            if idx:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _render(v, out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for idx, v in enumerate(value):
            if idx:
                out.append(",")
            _render(v, out)
        out.append("]")
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif value is None:
        out.append("null")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        out.append(format(float(value), ".17g"))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    else:
        raise TypeError(f"cannot serialize {type(value)!r}")


def dumps(value) -> str:
    out: list = []
    _render(value, out)
    return "".join(out)


def tree_to_obj(tree: KTree) -> dict:
    labels = tree.sorted_labels()
    return {
        "labels": labels,
        "shape": [sorted(e) for e in tree.sorted_edges()],
        "tops": {str(i): tree.tops[i] for i in labels},
        "edges": [
            {
                "labels": sorted(e),
                "blocks": tree.partitions[e].blocks.tolist(),
                "dust": tree.partitions[e].dust_bound,
            }
            for e in tree.sorted_edges()
        ],
    }


def tree_from_obj(obj: dict) -> KTree:
    labels = frozenset(int(i) for i in obj["labels"])
    shape = TreeShape(labels, frozenset(frozenset(e) for e in obj["shape"]))
    tops = {int(k): float(v) for k, v in obj["tops"].items()}
    partitions = {
        frozenset(e["labels"]): IntervalPartition(e["blocks"], dust_bound=e.get("dust", 0.0))
        for e in obj["edges"]
    }
    return KTree(shape, tops, partitions)


def _ref_to_obj(ref) -> Optional[dict]:
    if ref is None:
        return None
    if isinstance(ref, LeafRef):
        return {"kind": "leaf", "label": ref.label}
    return {"kind": "internal", "edge": list(ref.edge), "index": ref.index}


def _config_obj(cfg: EvolutionConfig) -> dict:
    return {
        "grid_step": cfg.grid_step,
        "jump_truncation_rel": cfg.jump_truncation_rel,
        "clock_step_rel": cfg.clock_step_rel,
        "mass_floor": cfg.mass_floor,
        "record_times": list(cfg.record_times),
        "pdip_blocks": cfg.pdip_blocks,
    }


def manifest(command: str, seed: int, cfg: Optional[EvolutionConfig] = None, **extra) -> dict:
    out = {"command": command, "seed": seed, "tool_version": TOOL_VERSION}
    if cfg is not None:
        out["config"] = _config_obj(cfg)
    out.update(extra)
    return out


def trajectory_to_obj(traj: Trajectory, man: dict) -> dict:
    return {
        "manifest": man,
        "states": [{"t": t, "tree": tree_to_obj(traj.states[t])} for t in traj.times],
        "events": [
            {
                "t": ev.time,
                "caused_by": ev.caused_by,
                "dropped": ev.dropped,
                "target": _ref_to_obj(ev.resample_target),
            }
            for ev in traj.events
        ],
        "terminal": traj.terminal,
        "terminal_time": traj.terminal_time,
    }


def trajectory_csv(traj: Trajectory) -> str:
    """Per-record rows: time, total mass, one column per initial label, the
    per-edge masses, and the canonical shape id."""
    labels = sorted(traj.initial.labels)
    buf = io.StringIO()
    head = ["time", "total_mass"] + [f"x_{i}" for i in labels] + ["edge_masses", "shape_id"]
    buf.write(",".join(head) + "\n")
    for t in traj.times:
        tree = traj.states[t]
        row = [format(t, ".17g"), format(tree.mass, ".17g")]
        for i in labels:
            row.append(format(tree.tops.get(i, 0.0), ".17g") if i in tree.labels else "")
        edge_masses = ";".join(
            "-".join(map(str, sorted(e))) + ":" + format(tree.partitions[e].mass, ".17g")
            for e in tree.sorted_edges()
        )
        row.append(edge_masses)
        row.append('"' + shape_text(tree.shape) + '"')
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
