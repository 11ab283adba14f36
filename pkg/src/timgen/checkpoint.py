"""Binary checkpoints.

Layout::

    TIMGEN1\\n
    config <n>\\n          followed by n ``key = value`` lines
    tensors <m>\\n         followed by m ``name rows cols`` lines
    data\\n
    <little-endian float64 values of every tensor, in manifest order>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, TrainConfig, format_config, from_mapping, parse_key_values
from .model import TIMGen

MAGIC = b"TIMGEN1\n"


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    """Manifest disagrees with the model: missing, extra or misshapen tensors."""


def _rows_cols(t: torch.Tensor) -> tuple[int, int]:
    if t.dim() == 2:
        return int(t.shape[0]), int(t.shape[1])
    return int(t.numel()), 1


def checkpoint_bytes(model: TIMGen, cfg: TrainConfig | None = None) -> bytes:
    cfg = cfg or model.cfg
    config_lines = format_config(cfg).splitlines()
    params = list(model.named_parameters())
    header = [MAGIC.decode(), f"config {len(config_lines)}\n"]
    header += [line + "\n" for line in config_lines]
    header.append(f"tensors {len(params)}\n")
    for name, t in params:
        rows, cols = _rows_cols(t)
        header.append(f"{name} {rows} {cols}\n")
    header.append("data\n")
    body = b"".join(t.detach().cpu().numpy().astype("<f8").tobytes() for _, t in params)
    return "".join(header).encode("utf-8") + body


def save_checkpoint(model: TIMGen, path, cfg: TrainConfig | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, cfg))


def _readline(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CheckpointTruncatedError("checkpoint header ends prematurely")
    try:
        return buf[pos:end].decode("utf-8"), end + 1
    except UnicodeDecodeError:
        raise CheckpointVersionError("checkpoint header is not text") from None


def _count(line: str, keyword: str) -> int:
    parts = line.split()
    if len(parts) != 2 or parts[0] != keyword or not parts[1].isdigit():
        raise CheckpointVersionError(f"expected '{keyword} <n>', got {line!r}")
    return int(parts[1])


def load_checkpoint(path) -> tuple[TIMGen, TrainConfig]:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointVersionError("not a TIMGEN1 checkpoint (bad magic)")
    pos = len(MAGIC)
    line, pos = _readline(buf, pos)
    n_cfg = _count(line, "config")
    cfg_lines = []
    for _ in range(n_cfg):
        line, pos = _readline(buf, pos)
        cfg_lines.append(line)
    try:
        cfg = from_mapping(TrainConfig, parse_key_values("\n".join(cfg_lines), str(path)))
    except ConfigError as exc:
        raise CheckpointVersionError(f"config snapshot rejected: {exc}") from None
    line, pos = _readline(buf, pos)
    n_tensors = _count(line, "tensors")
    manifest = []
    for _ in range(n_tensors):
        line, pos = _readline(buf, pos)
        parts = line.split()
        if len(parts) != 3 or not parts[1].isdigit() or not parts[2].isdigit():
            raise CheckpointShapeError(f"bad manifest line {line!r}")
        manifest.append((parts[0], int(parts[1]), int(parts[2])))
    line, pos = _readline(buf, pos)
    if line != "data":
        raise CheckpointVersionError(f"expected 'data' marker, got {line!r}")

    model = TIMGen(cfg)
    params = dict(model.named_parameters())
    names = [name for name, _, _ in manifest]
    missing = sorted(set(params) - set(names))
    extra = sorted(set(names) - set(params))
    if missing or extra:
        raise CheckpointShapeError(f"manifest mismatch: missing {missing}, unexpected {extra}")
    need = sum(rows * cols for _, rows, cols in manifest) * 8
    if len(buf) - pos < need:
        raise CheckpointTruncatedError(f"expected {need} data bytes, found {len(buf) - pos}")
    if len(buf) - pos > need:
        raise CheckpointShapeError(f"{len(buf) - pos - need} trailing bytes after tensor data")
    with torch.no_grad():
        for name, rows, cols in manifest:
            target = params[name]
            if (rows, cols) != _rows_cols(target):
                raise CheckpointShapeError(f"{name}: checkpoint shape {rows}x{cols}, model expects "
                                           f"{'x'.join(map(str, _rows_cols(target)))}")
            n = rows * cols
            values = np.frombuffer(buf, dtype="<f8", count=n, offset=pos)
            target.copy_(torch.from_numpy(values.astype(np.float64)).view(target.shape))
            pos += n * 8
    return model, cfg
