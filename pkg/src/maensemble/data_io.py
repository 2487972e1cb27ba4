"""Dataset manifests, annotation parsing and candidate-file serialization.

Manifest schema (JSON)::

    {
      "version": 1,
      "scale": 1.0,              # reference-resolution lengths -> pixels (optional)
      "grading": false,          # grades required iff true
      "fov_threshold": 0.04,     # surround threshold, fraction of full range (optional)
      "entries": [
        {"name": "img_000", "image": "images/img_000.png",
         "annotation": "gt/img_000.txt",          # or "gt": [[x, y], ...]
         "annotation_format": "points",           # or "diaretdb1"
         "grade": 2}                              # 0..3 or "R0".."R3"
      ]
    }

Relative paths resolve against the manifest's directory. Candidate and
ground-truth files hold one ``x y [confidence]`` row per line.
"""
from __future__ import annotations

import json
import os
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage as ndi

from .core import CandidateSet, GrayImage, MAError
from .synthetic import Dataset, Sample

CANDIDATE_HEADER = "# maensemble candidates: x y [confidence]"
MANIFEST_VERSION = 1
DEFAULT_FOV_THRESHOLD = 0.04
DIARETDB1_MA_TYPES = ("Red_small_dots",)


class LoadError(MAError):
    """A dataset entry or file could not be read."""


class CandidateParseError(LoadError):
    pass


# ---------------------------------------------------------------------------
# atomic text output
# ---------------------------------------------------------------------------


def write_text_atomic(path, text: str) -> None:
    """Write ``text`` with LF endings via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# candidate files
# ---------------------------------------------------------------------------


def format_candidates(cands: CandidateSet) -> str:
    lines = [CANDIDATE_HEADER]
    conf = cands.confidence
    for i, (x, y) in enumerate(cands.points):
        row = f"{x:.3f} {y:.3f}"
        if conf is not None:
            row += f" {float(conf[i])!r}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def parse_candidates(text: str, source: str = "<string>") -> CandidateSet:
    pts, confs, ncols = [], [], None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise CandidateParseError(f"{source}:{lineno}: expected 'x y [confidence]', got {raw!r}")
        if ncols is None:
            ncols = len(parts)
        elif len(parts) != ncols:
            raise CandidateParseError(f"{source}:{lineno}: mixed 2- and 3-column rows")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise CandidateParseError(f"{source}:{lineno}: non-numeric value in {raw!r}") from None
        if not all(np.isfinite(vals)):
            raise CandidateParseError(f"{source}:{lineno}: non-finite value in {raw!r}")
        pts.append(vals[:2])
        if ncols == 3:
            confs.append(vals[2])
    points = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    try:
        return CandidateSet(points, np.asarray(confs) if ncols == 3 else None)
    except MAError as exc:
        raise CandidateParseError(f"{source}: {exc}") from None


def save_candidates(path, cands: CandidateSet) -> None:
    write_text_atomic(path, format_candidates(cands))


def load_candidates(path) -> CandidateSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read candidate file {path}: {exc.strerror}") from None
    return parse_candidates(text, str(path))


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------


def parse_diaretdb1(path, marking_types=DIARETDB1_MA_TYPES) -> np.ndarray:
    """Representative points of the selected marking types in a DiaretDB1 XML file."""
    try:
        root = ET.parse(path).getroot()
    except (OSError, ET.ParseError) as exc:
        raise LoadError(f"cannot parse DiaretDB1 annotation {path}: {exc}") from None
    pts = []
    for marking in root.iter("marking"):
        kind = (marking.findtext("markingtype") or "").strip()
        if kind not in marking_types:
            continue
        coords = marking.findtext("representativepoint/coords2d")
        if coords is None:
            raise LoadError(f"{path}: marking of type {kind} has no representative point")
        try:
            x, y = (float(v) for v in coords.split(","))
        except ValueError:
            raise LoadError(f"{path}: malformed coordinates {coords!r}") from None
        pts.append((x, y))
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def estimate_fov(channel: np.ndarray, threshold: float = DEFAULT_FOV_THRESHOLD) -> np.ndarray:
    """Largest bright connected region, holes filled (the camera surround is dark)."""
    mask = channel > threshold
    labels, n = ndi.label(mask)
    if n == 0:
        return mask
    sizes = ndi.sum(mask, labels, index=np.arange(1, n + 1))
    mask = labels == (int(np.argmax(sizes)) + 1)
    return ndi.binary_fill_holes(mask)


def read_image(path, fov_threshold: float = DEFAULT_FOV_THRESHOLD) -> GrayImage:
    """Green channel of an 8-bit RGB image (or the gray image itself), scaled to [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode in ("P", "RGBA", "LA", "CMYK", "YCbCr"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise LoadError(f"{path}: unsupported image mode {im.mode} (need 8-bit RGB or gray)")
    except OSError as exc:
        raise LoadError(f"cannot decode image {path}: {exc}") from None
    chan = arr[..., 1] if arr.ndim == 3 else arr
    data = chan.astype(np.float64) / 255.0
    fov = estimate_fov(data, fov_threshold)
    if not fov.any():
        raise LoadError(f"{path}: no field of view found above threshold {fov_threshold}")
    return GrayImage(data, fov)


def to_rgb8(img: GrayImage) -> np.ndarray:
    """Pseudo-fundus RGB rendering whose green channel is the image itself."""
    g = np.round(img.normalized() * 255.0).astype(np.uint8)
    r = np.minimum(255, np.round(g * 1.5)).astype(np.uint8)
    b = np.round(g * 0.4).astype(np.uint8)
    return np.dstack([r, g, b])


def write_png(path, img: GrayImage) -> None:
    import io

    buf = io.BytesIO()
    Image.fromarray(to_rgb8(img), mode="RGB").save(buf, format="PNG")
    write_bytes_atomic(path, buf.getvalue())


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _parse_grade(value, name: str) -> int:
    if isinstance(value, str) and value.upper() in ("R0", "R1", "R2", "R3"):
        return int(value[1])
    if isinstance(value, int) and not isinstance(value, bool) and 0 <= value <= 3:
        return value
    raise LoadError(f"entry {name}: grade must be 0..3 or R0..R3, got {value!r}")


def _load_entry(entry: dict, base: Path, grading: bool, fov_threshold: float, idx: int) -> Sample:
    if not isinstance(entry, dict):
        raise LoadError(f"manifest entry {idx} is not an object")
    name = str(entry.get("name") or Path(str(entry.get("image", f"entry_{idx}"))).stem)
    known = {"name", "image", "annotation", "annotation_format", "gt", "grade"}
    unknown = set(entry) - known
    if unknown:
        raise LoadError(f"entry {name}: unknown keys {sorted(unknown)}")
    if "image" not in entry:
        raise LoadError(f"entry {name}: missing 'image'")
    img_path = base / entry["image"]
    if not img_path.is_file():
        raise LoadError(f"entry {name}: image {img_path} not found")
    try:
        img = read_image(img_path, fov_threshold)
    except LoadError as exc:
        raise LoadError(f"entry {name}: {exc}") from None

    if ("gt" in entry) == ("annotation" in entry):
        raise LoadError(f"entry {name}: give exactly one of 'gt' or 'annotation'")
    if "gt" in entry:
        try:
            gt = np.asarray(entry["gt"], dtype=np.float64).reshape(-1, 2)
        except (TypeError, ValueError):
            raise LoadError(f"entry {name}: inline gt must be a list of [x, y] pairs") from None
    else:
        ann = base / entry["annotation"]
        fmt = entry.get("annotation_format", "points")
        try:
            if fmt == "points":
                gt = load_candidates(ann).points.copy()
            elif fmt == "diaretdb1":
                gt = parse_diaretdb1(ann)
            else:
                raise LoadError(f"unknown annotation_format {fmt!r}")
        except LoadError as exc:
            raise LoadError(f"entry {name}: {exc}") from None
    if len(gt) and (gt.min() < 0 or np.any(gt[:, 0] > img.width - 1) or np.any(gt[:, 1] > img.height - 1)):
        raise LoadError(f"entry {name}: ground-truth point outside the {img.width}x{img.height} image")

    grade = None
    if grading:
        if "grade" not in entry:
            raise LoadError(f"entry {name}: grading manifest requires a grade")
        grade = _parse_grade(entry["grade"], name)
    elif "grade" in entry:
        raise LoadError(f"entry {name}: grade given but the manifest does not declare grading")
    return Sample(name, img, gt, grade)


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise LoadError(f"cannot read manifest {manifest_path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise LoadError(f"manifest {manifest_path} needs an 'entries' list")
    unknown = set(doc) - {"version", "scale", "grading", "fov_threshold", "entries"}
    if unknown:
        raise LoadError(f"manifest {manifest_path}: unknown keys {sorted(unknown)}")
    if doc.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
        raise LoadError(f"manifest {manifest_path}: unsupported version {doc.get('version')}")
    scale = float(doc.get("scale", 1.0))
    if not scale > 0:
        raise LoadError(f"manifest {manifest_path}: scale must be positive")
    grading = bool(doc.get("grading", False))
    thr = float(doc.get("fov_threshold", DEFAULT_FOV_THRESHOLD))
    base = manifest_path.parent
    samples = [_load_entry(e, base, grading, thr, i) for i, e in enumerate(doc["entries"])]
    names = [s.name for s in samples]
    if len(set(names)) != len(names):
        raise LoadError(f"manifest {manifest_path}: duplicate entry names")
    return Dataset(tuple(samples), scale, grading)


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write images as RGB PNGs, ground truth as point files, and a manifest."""
    out_dir = Path(out_dir)
    entries = []
    for s in ds.samples:
        write_png(out_dir / "images" / f"{s.name}.png", s.image)
        save_candidates(out_dir / "gt" / f"{s.name}.txt", CandidateSet(s.gt))
        e = {"name": s.name, "image": f"images/{s.name}.png", "annotation": f"gt/{s.name}.txt"}
        if ds.grading:
            e["grade"] = int(s.grade)
        entries.append(e)
    doc = {"version": MANIFEST_VERSION, "scale": ds.scale, "grading": ds.grading, "entries": entries}
    path = out_dir / "manifest.json"
    write_text_atomic(path, dumps_json(doc))
    return path


def candidate_filename(name: str) -> str:
    return f"{name}.txt"


def load_candidate_dir(directory, names) -> list[CandidateSet]:
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"candidate directory {directory} not found")
    return [load_candidates(directory / candidate_filename(n)) for n in names]
