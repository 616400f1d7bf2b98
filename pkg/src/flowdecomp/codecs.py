"""Bit-exact file codecs (KITTI-style interchange formats).

Flow:  16-bit 3-channel PNG, channels (u, v, valid) with
       enc = round(value * 64 + 2^15) and valid in {0, 1}.
Depth: 16-bit single-channel PNG, enc = round(D * 256), 0 marks invalid.
Pose:  text, one line of 12 floats per frame (row-major 3x4 [R|T]
       camera-to-world pose).
"""

from __future__ import annotations

import hashlib
import os
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch

from .errors import ValidationError
from .geometry import DTYPE, DepthMap, Intrinsics, RigidTransform, StereoRig
from .warp import FlowField, Image

_FLOW_SCALE = 64.0
_FLOW_OFFSET = 2**15
_DEPTH_SCALE = 256.0
_PNG_PARAMS = [cv2.IMWRITE_PNG_COMPRESSION, 6]


def _write_png(path, array: np.ndarray) -> None:
    if array.ndim == 3:
        array = array[:, :, ::-1]  # RGB -> BGR for OpenCV
    if not cv2.imwrite(str(path), array, _PNG_PARAMS):
        raise ValidationError(f"cannot write PNG {path}")


def _read_png(path) -> np.ndarray:
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise ValidationError(f"cannot read PNG {path}")
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        arr = arr[:, :, ::-1]  # BGR -> RGB
    return arr


def write_flow_png(path, flow: FlowField) -> None:
    u = flow.values[0].detach().numpy()
    v = flow.values[1].detach().numpy()
    valid = flow.valid.numpy()
    enc_u = np.rint(u * _FLOW_SCALE + _FLOW_OFFSET)
    enc_v = np.rint(v * _FLOW_SCALE + _FLOW_OFFSET)
    for enc in (enc_u, enc_v):
        bad = valid & ((enc < 0) | (enc > 65535))
        if bad.any():
            raise ValidationError("flow value outside encodable range")
    enc_u = np.where(valid, enc_u, _FLOW_OFFSET).astype(np.uint16)
    enc_v = np.where(valid, enc_v, _FLOW_OFFSET).astype(np.uint16)
    enc_valid = valid.astype(np.uint16)
    _write_png(path, np.stack([enc_u, enc_v, enc_valid], axis=2))


def read_flow_png(path) -> FlowField:
    arr = _read_png(path)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint16:
        raise ValidationError(f"{path} is not a 16-bit 3-channel flow PNG")
    valid = arr[:, :, 2] > 0
    u = (arr[:, :, 0].astype(np.float64) - _FLOW_OFFSET) / _FLOW_SCALE
    v = (arr[:, :, 1].astype(np.float64) - _FLOW_OFFSET) / _FLOW_SCALE
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return FlowField(torch.as_tensor(np.stack([u, v]), dtype=DTYPE), torch.as_tensor(valid))


def write_depth_png(path, depth: DepthMap) -> None:
    vals = depth.values.detach().numpy()
    valid = depth.valid.numpy()
    enc = np.rint(vals * _DEPTH_SCALE)
    bad = valid & ((enc < 1) | (enc > 65535))
    if bad.any():
        raise ValidationError("depth value outside encodable range")
    _write_png(path, np.where(valid, enc, 0.0).astype(np.uint16))


def read_depth_png(path) -> DepthMap:
    arr = _read_png(path)
    if arr.ndim != 2 or arr.dtype != np.uint16:
        raise ValidationError(f"{path} is not a 16-bit single-channel depth PNG")
    valid = arr > 0
    vals = arr.astype(np.float64) / _DEPTH_SCALE
    return DepthMap(torch.as_tensor(np.where(valid, vals, 0.0), dtype=DTYPE), torch.as_tensor(valid))


def write_pose_txt(path, transforms: Sequence[RigidTransform]) -> None:
    lines = []
    for t in transforms:
        vals = t.matrix34().reshape(-1).tolist()
        lines.append(" ".join(f"{x:.9e}" for x in vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pose_txt(path) -> List[RigidTransform]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 12:
                raise ValidationError(f"{path}:{lineno}: expected 12 values, got {len(parts)}")
            mat = np.array([float(p) for p in parts], dtype=np.float64).reshape(3, 4)
            rot = torch.as_tensor(mat[:, :3], dtype=DTYPE)
            err = float((rot @ rot.T - torch.eye(3, dtype=DTYPE)).abs().max())
            det = float(torch.linalg.det(rot))
            if err > 1e-3 or abs(det - 1.0) > 1e-3:
                raise ValidationError(f"{path}:{lineno}: rotation is not orthonormal")
            # re-orthonormalize within the validated tolerance so small
            # print-precision errors do not trip downstream invariants
            u, _, vt = np.linalg.svd(mat[:, :3])
            rot = u @ vt
            if np.linalg.det(rot) < 0:
                rot = u @ np.diag([1.0, 1.0, -1.0]) @ vt
            out.append(RigidTransform(torch.as_tensor(rot, dtype=DTYPE),
                                      torch.as_tensor(mat[:, 3], dtype=DTYPE)))
    if not out:
        raise ValidationError(f"{path}: no poses found")
    return out


def write_image_png(path, image: Image) -> None:
    vals = (image.values.detach().numpy() * 255.0).round().astype(np.uint8)
    if vals.shape[0] == 1:
        _write_png(path, vals[0])
    elif vals.shape[0] == 3:
        _write_png(path, np.moveaxis(vals, 0, 2))
    else:
        raise ValidationError("only 1- or 3-channel images can be written")


def read_image_png(path) -> Image:
    arr = _read_png(path)
    if arr.dtype != np.uint8:
        raise ValidationError(f"{path} is not an 8-bit image PNG")
    vals = arr.astype(np.float64) / 255.0
    if vals.ndim == 2:
        return Image(torch.as_tensor(vals[None], dtype=DTYPE))
    return Image(torch.as_tensor(np.moveaxis(vals, 2, 0), dtype=DTYPE))


def write_mask_png(path, mask) -> None:
    arr = torch.as_tensor(mask, dtype=torch.bool).numpy().astype(np.uint8) * 255
    _write_png(path, arr)


def read_mask_png(path) -> torch.Tensor:
    arr = _read_png(path)
    if arr.ndim != 2:
        raise ValidationError(f"{path} is not a single-channel mask PNG")
    return torch.as_tensor(arr > 0)


def write_labels_png(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.dtype != np.uint8:
        raise ValidationError("labels must be a 2-D uint8 array")
    _write_png(path, labels)


def read_labels_png(path) -> np.ndarray:
    arr = _read_png(path)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValidationError(f"{path} is not an 8-bit label PNG")
    return arr


def write_calib(path, rig: StereoRig) -> None:
    k = rig.intrinsics
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{k.fx:.9e} {k.fy:.9e} {k.cx:.9e} {k.cy:.9e} {rig.baseline:.9e}\n")


def read_calib(path) -> StereoRig:
    with open(path, "r", encoding="utf-8") as fh:
        parts = fh.read().split()
    if len(parts) != 5:
        raise ValidationError(f"{path}: calibration must hold 'fx fy cx cy baseline'")
    fx, fy, cx, cy, baseline = (float(p) for p in parts)
    return StereoRig(Intrinsics(fx, fy, cx, cy), baseline)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(directory, names: Sequence[str]) -> None:
    lines = [f"{sha256_file(os.path.join(directory, n))}  {n}" for n in sorted(names)]
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def verify_manifest(directory) -> bool:
    path = os.path.join(directory, "manifest.txt")
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            digest, name = line.split(maxsplit=1)
            if sha256_file(os.path.join(directory, name)) != digest:
                return False
    return True
