"""Model, scene, and pool persistence.

The model file is a little-endian, magic-prefixed, versioned binary format
with CRC-protected header and payload, so truncation and bit corruption
surface as typed errors instead of garbage models. Round trips are bit
exact. Reported sizes use decimal megabytes (10^6 bytes).

Scenes are stored as compressed numpy archives; a model pool persists as a
manifest JSON next to one model file per record.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .compression import CompressedModel
from .errors import (
    CorruptHeaderError,
    ModelIOError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .geometry import CameraIntrinsics, CameraPose, VisibilityMatrix
from .matching import build_index
from .model import PointCloudModel
from .pool import ModelPool, ModelRecord
from .structures import LineStructure, PlaneStructure, StructureLabeling
from .synthetic import GroundTruthScene, SceneSpec

MAGIC = b"EGLM"
FORMAT_VERSION = 1
_HEADER_FMT = "<4sIIQIIIQII"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)

_FLAG_COMPRESSED = 1
_FLAG_LABELING = 2

BYTES_PER_MB = 10**6


class _Writer:
    def __init__(self):
        self.chunks: list[bytes] = []

    def raw(self, data: bytes):
        self.chunks.append(data)

    def array(self, arr: np.ndarray, dtype: str):
        self.chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def u32(self, value: int):
        self.chunks.append(struct.pack("<I", value))

    def f64(self, value: float):
        self.chunks.append(struct.pack("<d", value))

    def string(self, text: str):
        data = text.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def payload(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedPayloadError(
                f"payload ends at byte {len(self.data)}; needed {self.offset + n}"
            )
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def array(self, count: int, dtype: str) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * item), dtype=dtype).copy()

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def done(self):
        if self.offset != len(self.data):
            raise TruncatedPayloadError(
                f"{len(self.data) - self.offset} unread trailing payload bytes"
            )


def _write_labeling(w: _Writer, labeling: StructureLabeling):
    w.u32(len(labeling.structures))
    for s in labeling.structures:
        if isinstance(s, PlaneStructure):
            w.raw(struct.pack("<B", 0))
            params = np.concatenate([s.normal, [s.offset], np.zeros(3)])
        else:
            w.raw(struct.pack("<B", 1))
            params = np.concatenate([s.anchor, s.direction, np.zeros(1)])
        w.array(params, "<f8")
        w.u32(len(s.member_ids))
        w.array(s.member_ids, "<i8")
    w.u32(len(labeling.residual_ids))
    w.array(labeling.residual_ids, "<i8")


def _read_labeling(r: _Reader, num_points: int) -> StructureLabeling:
    structures = []
    for _ in range(r.u32()):
        kind = struct.unpack("<B", r.take(1))[0]
        params = r.array(7, "<f8")
        members = r.array(r.u32(), "<i8")
        if kind == 0:
            structures.append(
                PlaneStructure(normal=params[:3], offset=float(params[3]), member_ids=members)
            )
        elif kind == 1:
            structures.append(
                LineStructure(anchor=params[:3], direction=params[3:6], member_ids=members)
            )
        else:
            raise ModelIOError(f"unknown structure kind {kind}")
    residual = r.array(r.u32(), "<i8")
    return StructureLabeling(structures=structures, residual_ids=residual, num_points=num_points)


def save_model(model: PointCloudModel | CompressedModel, path: str | Path) -> int:
    """Serialize a model (or compressed model) to `path`; returns byte count."""
    compressed = model if isinstance(model, CompressedModel) else None
    pcm = compressed.model if compressed is not None else model

    w = _Writer()
    w.string(pcm.model_id)
    w.array(pcm.point_ids, "<i8")
    w.array(pcm.xyz, "<f8")
    w.array(np.array([d.shape[0] for d in pcm.descriptors]), "<u4")
    if pcm.num_points:
        w.array(np.vstack(pcm.descriptors), "<f8")
    for ids in pcm.visibility.points_in_camera:
        w.u32(len(ids))
        w.array(ids, "<i8")

    flags = 0
    if pcm.labeling is not None:
        flags |= _FLAG_LABELING
        _write_labeling(w, pcm.labeling)
    if compressed is not None:
        flags |= _FLAG_COMPRESSED
        w.string(compressed.method)
        w.f64(compressed.parameter)
        w.string(compressed.source_model_id)
        w.array(compressed.achieved_counts, "<i8")

    payload = w.payload()
    header_head = struct.pack(
        "<4sIIQIIIQI",
        MAGIC,
        FORMAT_VERSION,
        flags,
        pcm.num_points,
        pcm.num_cameras,
        pcm.descriptor_dim,
        len(pcm.model_id.encode("utf-8")),
        len(payload),
        zlib.crc32(payload),
    )
    header = header_head + struct.pack("<I", zlib.crc32(header_head))
    data = header + payload
    Path(path).write_bytes(data)
    return len(data)


def load_model(path: str | Path) -> PointCloudModel | CompressedModel:
    """Load a model file written by `save_model`.

    Raises:
        TruncatedPayloadError: the file is shorter than its header declares.
        CorruptHeaderError: bad magic or a failed CRC check.
        VersionMismatchError: unsupported format version.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER_SIZE:
        raise TruncatedPayloadError(f"file holds {len(data)} bytes; header needs {_HEADER_SIZE}")
    (
        magic,
        version,
        flags,
        num_points,
        num_cameras,
        descriptor_dim,
        _model_id_len,
        payload_len,
        payload_crc,
        header_crc,
    ) = struct.unpack(_HEADER_FMT, data[:_HEADER_SIZE])
    if magic != MAGIC:
        raise CorruptHeaderError("bad magic prefix")
    if zlib.crc32(data[: _HEADER_SIZE - 4]) != header_crc:
        raise CorruptHeaderError("header CRC mismatch")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}; supported {FORMAT_VERSION}")
    payload = data[_HEADER_SIZE:]
    if len(payload) != payload_len:
        raise TruncatedPayloadError(
            f"payload holds {len(payload)} bytes; header declares {payload_len}"
        )
    if zlib.crc32(payload) != payload_crc:
        raise CorruptHeaderError("payload CRC mismatch")

    r = _Reader(payload)
    model_id = r.string()
    point_ids = r.array(num_points, "<i8")
    xyz = r.array(num_points * 3, "<f8").reshape(num_points, 3)
    desc_counts = r.array(num_points, "<u4")
    all_desc = r.array(int(desc_counts.sum()) * descriptor_dim, "<f8").reshape(
        -1, descriptor_dim
    )
    descriptors = []
    offset = 0
    for c in desc_counts:
        descriptors.append(all_desc[offset : offset + int(c)].copy())
        offset += int(c)
    cam_lists = []
    for _ in range(num_cameras):
        cam_lists.append(r.array(r.u32(), "<i8"))

    labeling = None
    if flags & _FLAG_LABELING:
        labeling = _read_labeling(r, num_points)

    try:
        visibility = VisibilityMatrix(num_points, cam_lists)
        pcm = PointCloudModel(
            xyz=xyz,
            descriptors=descriptors,
            visibility=visibility,
            point_ids=point_ids,
            model_id=model_id,
            labeling=labeling,
        )
    except ValueError as exc:
        raise ModelIOError(f"payload is internally inconsistent: {exc}") from exc

    if not flags & _FLAG_COMPRESSED:
        r.done()
        return pcm
    method = r.string()
    parameter = r.f64()
    source_model_id = r.string()
    achieved = r.array(num_cameras, "<i8")
    r.done()
    return CompressedModel(
        model=pcm,
        selected_ids=point_ids.copy(),
        source_model_id=source_model_id,
        method=method,
        parameter=parameter,
        achieved_counts=achieved,
    )


def model_size_mb(path: str | Path) -> float:
    """File size in decimal megabytes, the unit used in reports."""
    return Path(path).stat().st_size / BYTES_PER_MB


def compressed_equal(a: CompressedModel, b: CompressedModel) -> bool:
    """Exact equality of compressed models (round-trip checks)."""
    return (
        a.model.equals(b.model)
        and np.array_equal(a.selected_ids, b.selected_ids)
        and a.source_model_id == b.source_model_id
        and a.method == b.method
        and a.parameter == b.parameter
        and np.array_equal(a.achieved_counts, b.achieved_counts)
    )


def save_scene(scene: GroundTruthScene, path: str | Path):
    """Store a ground-truth scene as a numpy archive (bit-exact round trip)."""
    lab = scene.true_labeling
    kinds = []
    params = []
    member_offsets = [0]
    members = []
    for s in lab.structures:
        if isinstance(s, PlaneStructure):
            kinds.append(0)
            params.append(np.concatenate([s.normal, [s.offset], np.zeros(3)]))
        else:
            kinds.append(1)
            params.append(np.concatenate([s.anchor, s.direction, np.zeros(1)]))
        members.append(s.member_ids)
        member_offsets.append(member_offsets[-1] + len(s.member_ids))

    vis_offsets = [0]
    vis_ids = []
    for ids in scene.visibility.points_in_camera:
        vis_ids.append(ids)
        vis_offsets.append(vis_offsets[-1] + len(ids))

    rotations = np.stack([pose.rotation for pose, _ in scene.cameras])
    translations = np.stack([pose.translation for pose, _ in scene.cameras])
    intr = np.array(
        [
            [i.focal_x, i.focal_y, i.principal_x, i.principal_y, i.image_width, i.image_height]
            for _, i in scene.cameras
        ]
    )
    np.savez_compressed(
        path,
        spec=np.frombuffer(
            json.dumps(dataclasses.asdict(scene.spec)).encode("utf-8"), dtype=np.uint8
        ),
        xyz=scene.xyz,
        descriptors=scene.descriptors,
        rotations=rotations,
        translations=translations,
        intrinsics=intr,
        vis_ids=np.concatenate(vis_ids) if vis_ids else np.zeros(0, dtype=np.int64),
        vis_offsets=np.array(vis_offsets, dtype=np.int64),
        structure_kinds=np.array(kinds, dtype=np.int64),
        structure_params=np.stack(params) if params else np.zeros((0, 7)),
        structure_members=np.concatenate(members) if members else np.zeros(0, dtype=np.int64),
        member_offsets=np.array(member_offsets, dtype=np.int64),
        residual_ids=lab.residual_ids,
    )


def load_scene(path: str | Path) -> GroundTruthScene:
    with np.load(path) as data:
        spec = SceneSpec(**json.loads(bytes(data["spec"]).decode("utf-8")))
        xyz = data["xyz"]
        n = len(xyz)
        structures = []
        for idx, kind in enumerate(data["structure_kinds"]):
            p = data["structure_params"][idx]
            ids = data["structure_members"][
                data["member_offsets"][idx] : data["member_offsets"][idx + 1]
            ]
            if kind == 0:
                structures.append(PlaneStructure(normal=p[:3], offset=float(p[3]), member_ids=ids))
            else:
                structures.append(LineStructure(anchor=p[:3], direction=p[3:6], member_ids=ids))
        labeling = StructureLabeling(
            structures=structures, residual_ids=data["residual_ids"], num_points=n
        )
        cam_lists = [
            data["vis_ids"][data["vis_offsets"][j] : data["vis_offsets"][j + 1]]
            for j in range(len(data["vis_offsets"]) - 1)
        ]
        cameras = []
        for j in range(len(data["rotations"])):
            i = data["intrinsics"][j]
            cameras.append(
                (
                    CameraPose(rotation=data["rotations"][j], translation=data["translations"][j]),
                    CameraIntrinsics(
                        focal_x=float(i[0]),
                        focal_y=float(i[1]),
                        principal_x=float(i[2]),
                        principal_y=float(i[3]),
                        image_width=int(i[4]),
                        image_height=int(i[5]),
                    ),
                )
            )
        return GroundTruthScene(
            xyz=xyz,
            true_labeling=labeling,
            descriptors=data["descriptors"],
            cameras=cameras,
            visibility=VisibilityMatrix(n, cam_lists, min_track_length=2),
            spec=spec,
        )


def save_pool(pool: ModelPool, directory: str | Path, *, num_words: int | None = None) -> Path:
    """Persist a pool as manifest.json plus one model file per record.

    Match indexes are not stored; they are rebuilt deterministically from the
    recorded (num_words, seed) on load.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for r in pool.records:
        filename = f"{r.record_id}.eglm"
        save_model(r.model, directory / filename)
        records.append(
            {
                "record_id": r.record_id,
                "file": filename,
                "created": r.created,
                "last_used": r.last_used,
                "condition": r.condition,
                "index_num_words": num_words if num_words is not None else r.index.num_words,
                "index_seed": r.index.build_seed,
            }
        )
    manifest = {
        "format_version": 1,
        "active_id": pool.active_id,
        "t1": pool.t1,
        "t2": pool.t2,
        "swap_threshold": pool.swap_threshold,
        "invalid_window": pool.invalid_window,
        "invalid_quota": pool.invalid_quota,
        "ttl": pool.ttl if np.isfinite(pool.ttl) else None,
        "records": records,
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


def load_pool(directory: str | Path) -> ModelPool:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format_version") != 1:
        raise VersionMismatchError("unsupported pool manifest version")
    records = []
    for entry in manifest["records"]:
        model = load_model(directory / entry["file"])
        index = build_index(model, entry["index_num_words"], entry["index_seed"])
        records.append(
            ModelRecord(
                record_id=entry["record_id"],
                model=model,
                index=index,
                created=entry["created"],
                last_used=entry["last_used"],
                condition=entry.get("condition", ""),
            )
        )
    ttl = manifest.get("ttl")
    return ModelPool(
        records=records,
        active_id=manifest["active_id"],
        t1=manifest["t1"],
        t2=manifest["t2"],
        swap_threshold=manifest["swap_threshold"],
        invalid_window=manifest["invalid_window"],
        invalid_quota=manifest["invalid_quota"],
        ttl=float("inf") if ttl is None else ttl,
    )
