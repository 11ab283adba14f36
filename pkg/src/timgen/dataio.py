"""Line-delimited dataset records and ground-truth files."""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoding import ActionType, Context, Device, Interaction, Platform
from .providers import MODALITIES


class DatasetError(ValueError):
    pass


def interaction_to_record(x: Interaction) -> dict:
    rec = {
        "user_id": x.user_id,
        "item_id": x.item_id,
        "action": x.action.name.lower(),
        "device": x.context.device.name.lower(),
        "platform": x.context.platform.name.lower(),
        "geo": int(x.context.geo),
        "timestamp": int(x.timestamp),
    }
    for m in MODALITIES:
        v = x.modalities.get(m)
        if v is not None:
            rec[m] = [float(a) for a in v]
    rec["score"] = float(x.score)
    rec["class"] = int(x.label)
    return rec


def _enum(cls, value, field, where):
    if not isinstance(value, str) or value != value.lower():
        raise DatasetError(f"{where}: {field} must be a lowercase string, got {value!r}")
    try:
        return cls.parse(value)
    except KeyError:
        raise DatasetError(f"{where}: unknown {field} {value!r}") from None


def record_to_interaction(rec: dict, where: str = "record") -> Interaction:
    try:
        modalities = {}
        for m in MODALITIES:
            v = rec.get(m)
            modalities[m] = None if v is None else np.asarray(v, dtype=np.float64)
        ts = rec["timestamp"]
        geo = rec["geo"]
        if not isinstance(ts, int) or not isinstance(geo, int):
            raise DatasetError(f"{where}: timestamp and geo must be integers")
        return Interaction(
            user_id=str(rec["user_id"]),
            item_id=str(rec["item_id"]),
            action=_enum(ActionType, rec["action"], "action", where),
            context=Context(_enum(Device, rec["device"], "device", where),
                            _enum(Platform, rec["platform"], "platform", where), geo),
            timestamp=ts,
            modalities=modalities,
            score=float(rec["score"]),
            label=int(rec["class"]),
        )
    except KeyError as exc:
        raise DatasetError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"{where}: {exc}") from None


def write_dataset(path, interactions: Iterable[Interaction]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for x in interactions:
            fh.write(json.dumps(interaction_to_record(x), separators=(",", ":")) + "\n")


def read_interactions(path) -> list[Interaction]:
    out = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"{where}: expected an object")
            out.append(record_to_interaction(rec, where))
    return out


def group_by_user(interactions: Sequence[Interaction]) -> "OrderedDict[str, list[Interaction]]":
    """Per-user histories in first-appearance order, each stably sorted by timestamp."""
    users: OrderedDict[str, list[Interaction]] = OrderedDict()
    for x in interactions:
        users.setdefault(x.user_id, []).append(x)
    for uid in users:
        users[uid].sort(key=lambda x: x.timestamp)
    return users


def read_dataset(path) -> "OrderedDict[str, list[Interaction]]":
    return group_by_user(read_interactions(path))


def write_truth(path, rows: Iterable[tuple[str, int, int, float]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for user_id, step, cls, intensity in rows:
            fh.write(f"{user_id}\t{step}\t{cls}\t{float(intensity)!r}\n")


def read_truth(path) -> dict[tuple[str, int], tuple[int, float]]:
    out = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields")
            try:
                out[(parts[0], int(parts[1]))] = (int(parts[2]), float(parts[3]))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return out
