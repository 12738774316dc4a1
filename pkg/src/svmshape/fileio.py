"""Atomic writes and the labeled point-set text format."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .shapes import OCCUPANCY_01, SVM_PM1, LabeledPointSet, ShapeSpec, validate_spec


def write_atomic(path, text: str) -> None:
    """Write through a temporary sibling file so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def format_points(ps: LabeledPointSet) -> str:
    lines = [f"# labels={ps.label_convention}"]
    lines += [f"{x!r} {y!r} {z!r} {int(l)}" for (x, y, z), l in zip(ps.points.tolist(), ps.labels.tolist())]
    return "\n".join(lines) + "\n"


def parse_points(text: str) -> LabeledPointSet:
    convention = SVM_PM1
    rows = []
    for n, ln in enumerate(text.splitlines(), 1):
        s = ln.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            if body.startswith("labels="):
                convention = body.split("=", 1)[1].strip()
                if convention not in (SVM_PM1, OCCUPANCY_01):
                    raise InvalidSpec(f"unknown label convention {convention!r}")
            continue
        parts = s.split()
        if len(parts) != 4:
            raise InvalidSpec(f"line {n}: expected 'x y z label'")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise InvalidSpec(f"line {n}: not a number") from None
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(arr)):
        raise InvalidSpec("non-finite coordinate")
    if np.any(arr[:, 3] != np.round(arr[:, 3])):
        raise InvalidSpec("labels must be integers")
    try:
        return LabeledPointSet(arr[:, :3], arr[:, 3].astype(np.int64), convention)
    except ValueError as exc:
        raise InvalidSpec(str(exc)) from None


def format_spec(spec) -> str:
    return "".join(f"{k} = {v}\n" for k, v in spec.to_items())


def parse_spec(text: str):
    items = {}
    for n, ln in enumerate(text.splitlines(), 1):
        s = ln.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise InvalidSpec(f"line {n}: expected key = value")
        k, v = s.split("=", 1)
        items[k.strip()] = v.strip()
    spec = ShapeSpec.from_items(items)
    validate_spec(spec)
    return spec
