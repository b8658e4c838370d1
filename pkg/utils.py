"""
File formats: PFM images, PNG previews, pose and point text files, JSON
manifests, binary checkpoints, CSV tables and JSON run logs.
Byte-level layouts are documented in FORMATS.md.
"""

import csv
import io
import json
import os
import struct
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from deblur.base import DTYPE, DatasetFormatError
from deblur.scene import SceneModel
from deblur.se3 import Pose

CHECKPOINT_MAGIC = b"DBLRCKPT"
CHECKPOINT_VERSION = 1


def _to_numpy(image) -> np.ndarray:
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    return np.asarray(image)


# ----------------------------------------------------------------------- PFM
def write_pfm(path, image):
    """Little-endian float32 PFM, rows stored bottom to top"""
    data = _to_numpy(image).astype("<f4")
    if data.ndim == 3 and data.shape[2] == 3:
        kind = "PF"
    elif data.ndim == 2:
        kind = "Pf"
    else:
        raise DatasetFormatError(f"cannot store array of shape {data.shape} as PFM", path)
    height, width = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{kind}\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def read_pfm(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            kind = f.readline().strip()
            width, height = (int(v) for v in f.readline().split())
            scale = float(f.readline().strip())
            payload = f.read()
    except (OSError, ValueError) as e:
        raise DatasetFormatError(f"unreadable PFM: {e}", path) from e
    if kind not in (b"PF", b"Pf"):
        raise DatasetFormatError(f"bad PFM magic {kind!r}", path)
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * channels * 4
    if len(payload) != expected:
        raise DatasetFormatError(f"PFM payload has {len(payload)} bytes, expected {expected}", path)
    data = np.frombuffer(payload, dtype=dtype).reshape((height, width, channels) if channels == 3 else (height, width))
    return np.flipud(data).astype(np.float32)


def write_png(path, image):
    """8-bit preview, values clipped to [0, 1]"""
    data = np.clip(_to_numpy(image), 0.0, 1.0)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8)).save(path)


# ------------------------------------------------------------ poses & points
def write_poses(path, poses: Sequence[Pose]):
    """One pose per line: qw qx qy qz tx ty tz, shortest round-trip decimal form"""
    with open(path, "w") as f:
        for pose in poses:
            f.write(" ".join(repr(float(v)) for v in pose.to_vector().detach()) + "\n")


def read_poses(path) -> List[Pose]:
    poses = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DatasetFormatError(f"cannot read poses: {e}", path) from e
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError:
            values = []
        if len(values) != 7:
            raise DatasetFormatError(f"line {number}: expected 7 numbers", path)
        poses.append(Pose.from_vector(torch.tensor(values, dtype=DTYPE)))
    return poses


def write_points(path, static_points, dynamic_tracks: Dict[int, torch.Tensor]):
    """Sparse points as 'x y z label t'; static points carry t = -1"""
    with open(path, "w") as f:
        for p in _to_numpy(static_points):
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} static -1\n")
        for t in sorted(dynamic_tracks):
            for p in _to_numpy(dynamic_tracks[t]):
                f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} dynamic {t}\n")


def read_points(path) -> Tuple[torch.Tensor, Dict[int, torch.Tensor]]:
    static, tracks = [], {}
    for number, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            xyz = [float(v) for v in parts[:3]]
            label, t = parts[3], int(parts[4])
        except (ValueError, IndexError):
            raise DatasetFormatError(f"line {number}: expected 'x y z label t'", path) from None
        if label == "static":
            static.append(xyz)
        elif label == "dynamic":
            tracks.setdefault(t, []).append(xyz)
        else:
            raise DatasetFormatError(f"line {number}: unknown label {label!r}", path)
    static_points = torch.tensor(static, dtype=DTYPE).reshape(-1, 3)
    return static_points, {t: torch.tensor(v, dtype=DTYPE) for t, v in tracks.items()}


# ---------------------------------------------------------------------- JSON
def write_json(path, payload):
    with open(path, "w") as f:
        f.write(json.dumps(payload, indent=2, sort_keys=True))


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"unreadable JSON: {e}", path) from e


def write_run_log(command: str, payload: dict, log_dir="logs") -> Path:
    """Dump a command's resolved inputs and outputs to logs/<command>_<timestamp>.log"""
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    os.makedirs(log_dir, exist_ok=True)
    path = Path(log_dir) / f"{command}_{timestamp}.log"
    with open(path, "w") as f:
        f.write(json.dumps(payload, indent=2, default=str))
    return path


# --------------------------------------------------------------- checkpoints
def save_checkpoint(path, scene: SceneModel, epoch: int, optimizer_state: Optional[dict] = None,
                    config: Optional[dict] = None, history: Optional[List[dict]] = None):
    """magic, uint32 LE version, then a torch.save payload"""
    payload = {
        "scene": scene.describe(),
        "state_dict": scene.state_dict(),
        "optimizer": optimizer_state,
        "epoch": int(epoch),
        "config": config,
        "history": history or [],
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    tmp = Path(f"{path}.tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(buffer.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DatasetFormatError(f"cannot read checkpoint: {e}", path) from e
    header = len(CHECKPOINT_MAGIC) + 4
    if len(raw) < header or raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DatasetFormatError("not a checkpoint (bad magic)", path)
    (version,) = struct.unpack("<I", raw[len(CHECKPOINT_MAGIC):header])
    if version != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}", path)
    try:
        return torch.load(io.BytesIO(raw[header:]), weights_only=True)
    except Exception as e:
        raise DatasetFormatError(f"corrupt checkpoint payload: {e}", path) from e


def scene_from_checkpoint(payload: dict) -> SceneModel:
    scene = SceneModel.from_description(payload["scene"])
    scene.load_state_dict(payload["state_dict"])
    return scene


# ----------------------------------------------------------------------- CSV
def write_csv(path, rows: Iterable[dict], columns: Sequence[str]):
    """Floats written with repr so values survive a round trip exactly"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def read_csv(path) -> List[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
