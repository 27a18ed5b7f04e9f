"""File formats and scene loading.

Formats (all binary values little-endian):

* point cloud   -- binary PLY, float32 x,y,z plus optional uint8 red,green,blue
* cameras       -- one JSON document per scene
* superpoints   -- header ``SP3D`` | version u32 | N u64, then int32 labels
* features      -- header ``FT3D`` | U u64 | D u64, then float32 rows
* masks         -- per view ``<view_id>.png`` 16-bit label raster (0 =
                   background) with ``<view_id>.masks.json`` naming global
                   mask ids; an optional ``<view_id>.masks.npz`` container
                   holds exact, possibly overlapping boolean rasters
* instances     -- header ``IN3D`` | version u32 | N u64, then int32 labels,
                   plus a JSON manifest
* depth dumps   -- header ``DB3D`` | W u32 | H u32, then float32 row-major
* pixel features-- header ``PF3D`` | W u32 | H u32 | D u32, then float32
* text queries  -- JSON {"query": str, "embedding": [float]}

Loaders never repair invalid data; every violated invariant raises a
distinct, descriptive error.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .scene import (CameraView, FeatureTable, Mask2D, MaskSet, PointCloud,
                    PointSetInstance, ProposalSet, Provenance, SceneBundle,
                    SuperpointPartition, instance_labels)

_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4),
    "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1),
    "char": ("<i1", 1), "int8": ("<i1", 1),
    "ushort": ("<u2", 2), "uint16": ("<u2", 2),
    "short": ("<i2", 2), "int16": ("<i2", 2),
    "uint": ("<u4", 4), "uint32": ("<u4", 4),
    "int": ("<i4", 4), "int32": ("<i4", 4),
}


def read_ply(path) -> PointCloud:
    path = Path(path)
    with open(path, "rb") as f:
        line = f.readline()
        if line.strip() != b"ply":
            raise ParseError(path, "not a PLY file (missing 'ply' magic)", line=1)
        n_vertices = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        lineno = 1
        while True:
            line = f.readline()
            lineno += 1
            if not line:
                raise ParseError(path, "unexpected end of header", line=lineno)
            parts = line.decode("ascii", "replace").split()
            if not parts:
                continue
            if parts[0] == "format":
                if parts[1] != "binary_little_endian":
                    raise ParseError(path, f"unsupported format {parts[1]!r}",
                                     line=lineno)
            elif parts[0] == "element":
                in_vertex = parts[1] == "vertex"
                if in_vertex:
                    n_vertices = int(parts[2])
            elif parts[0] == "property" and in_vertex:
                if parts[1] == "list":
                    raise ParseError(path, "list property in vertex element",
                                     line=lineno)
                if parts[1] not in _PLY_TYPES:
                    raise ParseError(path, f"unknown property type {parts[1]!r}",
                                     line=lineno)
                props.append((parts[2], parts[1]))
            elif parts[0] == "end_header":
                break
        if n_vertices is None:
            raise ParseError(path, "header declares no vertex element")
        names = [p[0] for p in props]
        for needed in ("x", "y", "z"):
            if needed not in names:
                raise ParseError(path, f"vertex element lacks property {needed!r}")
        dtype = np.dtype([(nm, _PLY_TYPES[tp][0]) for nm, tp in props])
        payload = f.read(dtype.itemsize * n_vertices)
        if len(payload) != dtype.itemsize * n_vertices:
            raise ParseError(path, f"truncated payload: expected "
                             f"{dtype.itemsize * n_vertices} bytes, got {len(payload)}",
                             offset=f.tell())
        rec = np.frombuffer(payload, dtype=dtype)
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([rec["red"], rec["green"], rec["blue"]],
                          axis=1).astype(np.float64) / 255.0
    return PointCloud(positions=positions, colors=colors)


def write_ply(cloud: PointCloud, path) -> None:
    path = Path(path)
    n = cloud.count
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green",
                   "property uchar blue"]
    header.append("end_header")
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.colors is not None:
        fields += [("red", "<u1"), ("green", "<u1"), ("blue", "<u1")]
    rec = np.empty(n, dtype=np.dtype(fields))
    rec["x"] = cloud.positions[:, 0].astype(np.float32)
    rec["y"] = cloud.positions[:, 1].astype(np.float32)
    rec["z"] = cloud.positions[:, 2].astype(np.float32)
    if cloud.colors is not None:
        for i, c in enumerate(("red", "green", "blue")):
            rec[c] = np.round(cloud.colors[:, i] * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


# ---------------------------------------------------------------------------
# cameras (JSON)
# ---------------------------------------------------------------------------

def read_cameras(path) -> list[CameraView]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(path, f"invalid JSON: {e.msg}", line=e.lineno) from e
    if not isinstance(doc, list):
        raise ParseError(path, "camera document must be a JSON list")
    views = []
    for i, entry in enumerate(doc):
        try:
            views.append(CameraView(
                view_id=str(entry["view_id"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                intrinsics=np.asarray(entry["K"], dtype=np.float64).reshape(3, 3),
                pose=np.asarray(entry["T"], dtype=np.float64).reshape(4, 4),
            ))
        except (KeyError, TypeError, AttributeError) as e:
            raise ParseError(path, f"camera entry {i} malformed: {e}") from e
    return views


def write_cameras(views, path) -> None:
    doc = [{
        "view_id": v.view_id,
        "width": v.width,
        "height": v.height,
        "K": [float(x) for x in v.intrinsics.reshape(-1)],
        "T": [float(x) for x in v.pose.reshape(-1)],
    } for v in views]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# headered int32 / float32 blobs
# ---------------------------------------------------------------------------

def _read_labeled_ints(path, magic: str) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise ParseError(path, "file shorter than 16-byte header", offset=0)
    got_magic, version, n = struct.unpack_from("<4sIQ", raw, 0)
    if got_magic != magic.encode("ascii"):
        raise ParseError(path, f"bad magic {got_magic!r}, expected {magic!r}", offset=0)
    if version != _FORMAT_VERSION:
        raise ParseError(path, f"unsupported version {version}", offset=4)
    expected = 16 + 4 * n
    if len(raw) != expected:
        raise ParseError(path, f"expected {expected} bytes for N={n}, got {len(raw)}",
                         offset=16)
    return np.frombuffer(raw, dtype="<i4", offset=16).astype(np.int32)


def _write_labeled_ints(values: np.ndarray, path, magic: str) -> None:
    values = np.ascontiguousarray(values, dtype="<i4")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIQ", magic.encode("ascii"), _FORMAT_VERSION,
                            values.shape[0]))
        f.write(values.tobytes())


def read_superpoints(path, n_points: int | None = None) -> SuperpointPartition:
    labels = _read_labeled_ints(path, "SP3D")
    if n_points is not None and labels.shape[0] != n_points:
        raise ValidationError(
            f"{path}: superpoint file covers {labels.shape[0]} points, "
            f"scene has {n_points}")
    if labels.size == 0:
        raise ValidationError(f"{path}: empty superpoint file")
    if labels.min() < 0:
        raise ValidationError(f"{path}: negative superpoint label")
    return SuperpointPartition(labels=labels.astype(np.int64),
                               superpoint_count=int(labels.max()) + 1)


def write_superpoints(partition: SuperpointPartition, path) -> None:
    _write_labeled_ints(partition.labels, path, "SP3D")


def read_features(path) -> FeatureTable:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20:
        raise ParseError(path, "file shorter than 20-byte header", offset=0)
    magic, u, d = struct.unpack_from("<4sQQ", raw, 0)
    if magic != b"FT3D":
        raise ParseError(path, f"bad magic {magic!r}, expected b'FT3D'", offset=0)
    expected = 20 + 4 * u * d
    if len(raw) != expected:
        raise ParseError(path, f"expected {expected} bytes for U={u} D={d}, "
                         f"got {len(raw)}", offset=20)
    vec = np.frombuffer(raw, dtype="<f4", offset=20).reshape(u, d)
    return FeatureTable(vectors=vec.astype(np.float64))


def write_features(table: FeatureTable, path) -> None:
    vec = np.ascontiguousarray(table.vectors, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sQQ", b"FT3D", vec.shape[0], vec.shape[1]))
        f.write(vec.tobytes())


# ---------------------------------------------------------------------------
# masks (16-bit PNG label raster + id map, or exact npz container)
# ---------------------------------------------------------------------------

def read_masks_dir(path, view_ids=None) -> MaskSet:
    from PIL import Image

    path = Path(path)
    masks: list[Mask2D] = []
    npz_files = sorted(path.glob("*.masks.npz"))
    png_files = sorted(p for p in path.glob("*.png"))
    if not npz_files and not png_files:
        raise ParseError(path, "no mask rasters (*.png or *.masks.npz) found")
    covered = set()
    for npz_path in npz_files:
        view_id = npz_path.name[:-len(".masks.npz")]
        covered.add(view_id)
        if view_ids is not None and view_id not in view_ids:
            continue
        with np.load(npz_path) as archive:
            for key in archive.files:
                try:
                    mask_id = int(key)
                except ValueError as e:
                    raise ParseError(npz_path, f"mask key {key!r} is not an id") from e
                masks.append(Mask2D(view_id=view_id, mask_id=mask_id,
                                    pixels=archive[key].astype(bool)))
    for png_path in png_files:
        view_id = png_path.stem
        if view_id in covered:
            continue
        if view_ids is not None and view_id not in view_ids:
            continue
        img = Image.open(png_path)
        raster = np.asarray(img)
        if raster.ndim != 2:
            raise ParseError(png_path, f"expected single-channel raster, "
                             f"got shape {raster.shape}")
        raster = raster.astype(np.int64)
        sidecar = png_path.with_name(png_path.stem + ".masks.json")
        if sidecar.exists():
            try:
                id_map = {int(k): int(v)
                          for k, v in json.loads(sidecar.read_text())["labels"].items()}
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ParseError(sidecar, f"malformed mask id map: {e}") from e
        else:
            id_map = None
        for label in np.unique(raster):
            if label == 0:
                continue
            if id_map is not None:
                if int(label) not in id_map:
                    raise ValidationError(
                        f"{png_path}: raster label {int(label)} missing from id map")
                mask_id = id_map[int(label)]
            else:
                mask_id = int(label)
            masks.append(Mask2D(view_id=view_id, mask_id=mask_id,
                                pixels=raster == label))
    return MaskSet(masks)


def write_masks_dir(mask_set: MaskSet, path, exact: bool = False) -> None:
    """Write per-view rasters.

    The default label-raster form is lossy when masks overlap within one
    view (later ids win); pass ``exact=True`` to emit the npz container.
    """
    from PIL import Image

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for view_id in mask_set.view_ids:
        view_masks = mask_set.by_view(view_id)
        if exact:
            arrays = {str(m.mask_id): m.pixels for m in view_masks}
            with open(path / f"{view_id}.masks.npz", "wb") as f:
                np.savez(f, **arrays)
            continue
        shape = view_masks[0].pixels.shape
        raster = np.zeros(shape, dtype=np.uint16)
        id_map = {}
        for label, m in enumerate(view_masks, start=1):
            if label > np.iinfo(np.uint16).max:
                raise ValidationError(f"view {view_id}: more than 65535 masks")
            raster[m.pixels] = label
            id_map[str(label)] = m.mask_id
        Image.fromarray(raster).save(path / f"{view_id}.png")
        (path / f"{view_id}.masks.json").write_text(
            json.dumps({"labels": id_map}, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# instances (IN3D + manifest)
# ---------------------------------------------------------------------------

def write_instances(proposals: ProposalSet, path) -> None:
    """Emit the per-point instance id array plus its JSON manifest.

    Overlaps are resolved by confidence precedence and recorded in the
    manifest; unassigned points get the sentinel id -1.
    """
    path = Path(path)
    labels, conflicts = instance_labels(proposals)
    _write_labeled_ints(labels, path, "IN3D")
    order = sorted(range(len(proposals.proposals)),
                   key=lambda i: (-proposals.proposals[i].confidence, i))
    sizes = np.bincount(labels[labels >= 0], minlength=len(order)) \
        if (labels >= 0).any() else np.zeros(len(order), dtype=np.int64)
    entries = []
    for new_id, src in enumerate(order):
        inst = proposals.proposals[src]
        entries.append({
            "id": new_id,
            "confidence": float(inst.confidence),
            "size": int(sizes[new_id]) if new_id < len(sizes) else 0,
            "provenance": {
                "stage": inst.provenance.stage,
                "views": list(inst.provenance.views),
                "masks": list(inst.provenance.masks),
            },
        })
    manifest = {"n_points": proposals.n_points, "n_views": proposals.n_views,
                "instances": entries, "conflicts": conflicts}
    manifest_path = path.with_suffix(path.suffix + ".json")
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read_instance_labels(path) -> np.ndarray:
    return _read_labeled_ints(path, "IN3D")


def read_instances(path) -> ProposalSet:
    """Rebuild a ProposalSet from a label file and its manifest."""
    path = Path(path)
    labels = read_instance_labels(path)
    manifest_path = path.with_suffix(path.suffix + ".json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError as e:
        raise ParseError(manifest_path, "instance manifest missing") from e
    except json.JSONDecodeError as e:
        raise ParseError(manifest_path, f"invalid JSON: {e.msg}", line=e.lineno) from e
    proposals = []
    for entry in manifest["instances"]:
        pts = np.nonzero(labels == entry["id"])[0]
        if pts.size == 0:
            continue
        proposals.append(PointSetInstance(
            points=pts,
            provenance=Provenance(stage=entry["provenance"]["stage"],
                                  views=tuple(entry["provenance"]["views"]),
                                  masks=tuple(entry["provenance"]["masks"])),
            confidence=entry["confidence"]))
    return ProposalSet(proposals=tuple(proposals), n_points=int(manifest["n_points"]),
                       n_views=int(manifest["n_views"]))


# ---------------------------------------------------------------------------
# lossless stage checkpoints (overlapping instance sets)
# ---------------------------------------------------------------------------

def write_checkpoint(proposals: ProposalSet, path) -> None:
    path = Path(path)
    offsets = np.zeros(len(proposals.proposals) + 1, dtype=np.int64)
    for i, p in enumerate(proposals.proposals):
        offsets[i + 1] = offsets[i] + p.size
    indices = (np.concatenate([p.points for p in proposals.proposals])
               if proposals.proposals else np.empty(0, np.int64))
    conf = np.array([p.confidence for p in proposals.proposals], dtype=np.float64)
    with open(path, "wb") as f:
        np.savez(f, offsets=offsets, indices=indices, confidence=conf,
                 n_points=np.int64(proposals.n_points),
                 n_views=np.int64(proposals.n_views))
    meta = [{"stage": p.provenance.stage, "views": list(p.provenance.views),
             "masks": list(p.provenance.masks)} for p in proposals.proposals]
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_checkpoint(path) -> ProposalSet:
    path = Path(path)
    with np.load(path) as archive:
        offsets = archive["offsets"]
        indices = archive["indices"]
        conf = archive["confidence"]
        n_points = int(archive["n_points"])
        n_views = int(archive["n_views"])
    try:
        meta = json.loads(Path(str(path) + ".json").read_text())
    except FileNotFoundError as e:
        raise ParseError(str(path) + ".json", "checkpoint metadata missing") from e
    proposals = []
    for i, entry in enumerate(meta):
        proposals.append(PointSetInstance(
            points=indices[offsets[i]:offsets[i + 1]],
            provenance=Provenance(stage=entry["stage"],
                                  views=tuple(entry["views"]),
                                  masks=tuple(entry["masks"])),
            confidence=float(conf[i])))
    return ProposalSet(proposals=tuple(proposals), n_points=n_points,
                       n_views=n_views)


# ---------------------------------------------------------------------------
# depth dumps and pixel features
# ---------------------------------------------------------------------------

def write_depth(depth: np.ndarray, path) -> None:
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sII", b"DB3D", w, h))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise ParseError(path, "file shorter than 12-byte header", offset=0)
    magic, w, h = struct.unpack_from("<4sII", raw, 0)
    if magic != b"DB3D":
        raise ParseError(path, f"bad magic {magic!r}, expected b'DB3D'", offset=0)
    if len(raw) != 12 + 4 * w * h:
        raise ParseError(path, "payload size does not match header", offset=12)
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)


def write_pixel_features(feat: np.ndarray, path) -> None:
    h, w, d = feat.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", b"PF3D", w, h, d))
        f.write(np.ascontiguousarray(feat, dtype="<f4").tobytes())


def read_pixel_features(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise ParseError(path, "file shorter than 16-byte header", offset=0)
    magic, w, h, d = struct.unpack_from("<4sIII", raw, 0)
    if magic != b"PF3D":
        raise ParseError(path, f"bad magic {magic!r}, expected b'PF3D'", offset=0)
    if len(raw) != 16 + 4 * w * h * d:
        raise ParseError(path, "payload size does not match header", offset=16)
    return (np.frombuffer(raw, dtype="<f4", offset=16)
            .reshape(h, w, d).astype(np.float64))


def read_query(path) -> tuple[str, np.ndarray]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(path, f"invalid JSON: {e.msg}", line=e.lineno) from e
    try:
        text = str(doc["query"])
        emb = np.asarray(doc["embedding"], dtype=np.float64)
    except (KeyError, TypeError) as e:
        raise ParseError(path, f"query document malformed: {e}") from e
    if emb.ndim != 1 or not np.isfinite(emb).all() or np.linalg.norm(emb) == 0.0:
        raise ValidationError(f"{path}: embedding must be a finite non-zero vector")
    return text, emb


def write_query(text: str, embedding: np.ndarray, path) -> None:
    Path(path).write_text(json.dumps(
        {"query": text, "embedding": [float(x) for x in embedding]},
        sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# scene loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenePaths:
    cloud: Path
    cameras: Path
    superpoints: Path | None = None
    features: Path | None = None
    masks_dir: Path | None = None

    @classmethod
    def in_dir(cls, root) -> "ScenePaths":
        root = Path(root)
        sp = root / "superpoints.sp3d"
        ft = root / "features.ft3d"
        md = root / "masks"
        return cls(cloud=root / "cloud.ply", cameras=root / "cameras.json",
                   superpoints=sp if sp.exists() else None,
                   features=ft if ft.exists() else None,
                   masks_dir=md if md.exists() else None)


def load_scene(paths: ScenePaths) -> SceneBundle:
    """Load and cross-validate a scene from its file set.

    When no superpoint file is given, the partition is computed with the
    internal over-segmenter; a feature file is required whenever the scene
    will be grown (synthetic scenes always carry one).
    """
    cloud = read_ply(paths.cloud)
    views = read_cameras(paths.cameras)
    if not views:
        raise ValidationError(f"{paths.cameras}: camera list is empty")
    if paths.superpoints is not None:
        partition = read_superpoints(paths.superpoints, n_points=cloud.count)
    else:
        from .oversegment import OversegConfig, oversegment
        partition = oversegment(cloud, OversegConfig())
    if paths.features is not None:
        features = read_features(paths.features)
        if features.count != partition.count:
            raise ValidationError(
                f"{paths.features}: {features.count} feature rows for "
                f"{partition.count} superpoints")
    else:
        raise ValidationError("a feature table is required (features.ft3d)")
    masks = None
    if paths.masks_dir is not None:
        masks = read_masks_dir(paths.masks_dir,
                               view_ids={v.view_id for v in views})
    return SceneBundle(cloud=cloud, views=tuple(views), partition=partition,
                       features=features, masks=masks)
