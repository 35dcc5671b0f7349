"""On-disk formats: features, weak labels, dense annotations, predictions.

All containers are little-endian binary with a fixed-width header and
fail closed on any mismatch before the payload is read:

    .feat   magic b"AVFT" | version u16 | dtype u8 (0=f64, 1=f32) | pad u8
            | T u32 | dim u32 | row-major floats
    .weak   magic b"AVWK" | version u16 | pad u16 | C u32 | C bytes (0/1)
    .dense  magic b"AVDN" | version u16 | pad u16 | T u32 | C u32
            | audio T*C bytes | visual T*C bytes
    .pred   magic b"AVPR" | version u16 | pad u16 | video count u32, then
            per video: id length u32 | id utf-8 | T u32 | C u32
            | audio T*C bytes | visual T*C bytes

A split is defined by a text manifest: one video per line, tab-separated
``id  audio.feat  visual.feat  labels.weak  annotation.dense`` with paths
relative to the manifest file. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError
from .metrics import DenseAnnotation
from .synth import Dataset, SyntheticVideo

_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class _Reader:
    def __init__(self, path):
        self.path = Path(path)
        self.blob = self.path.read_bytes()
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated at offset {self.off} reading {what}")
        chunk = self.blob[self.off : self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"{self.path}: bad magic {got!r}, expected {magic!r}")
        (version,) = self.unpack("<H", "version")
        if version != _VERSION:
            raise FormatError(f"{self.path}: unsupported version {version}")

    def done(self) -> None:
        if self.off != len(self.blob):
            raise FormatError(
                f"{self.path}: {len(self.blob) - self.off} trailing bytes at offset {self.off}"
            )


def _binary_bytes(arr: np.ndarray, what: str) -> bytes:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise FormatError(f"{what}: expected binary values")
    return np.ascontiguousarray(arr, dtype=np.uint8).tobytes()


# ----- features -----


def write_features(path, features: np.ndarray) -> None:
    features = np.asarray(features)
    dtype = np.dtype(features.dtype)
    if dtype not in _DTYPE_CODES:
        features = features.astype(np.float64)
        dtype = np.dtype(np.float64)
    t, dim = features.shape
    with open(path, "wb") as fh:
        fh.write(b"AVFT")
        fh.write(struct.pack("<HBxII", _VERSION, _DTYPE_CODES[dtype], t, dim))
        fh.write(np.ascontiguousarray(features).tobytes())


def read_features(path) -> np.ndarray:
    r = _Reader(path)
    r.expect_magic(b"AVFT")
    dtype_code, t, dim = r.unpack("<BxII", "feature header")
    if dtype_code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    dtype = _CODE_DTYPES[dtype_code]
    payload = r.take(t * dim * dtype.itemsize, "feature payload")
    r.done()
    return np.frombuffer(payload, dtype=dtype).reshape(t, dim).copy()


# ----- weak labels -----


def write_weak(path, weak: np.ndarray) -> None:
    weak = np.asarray(weak).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(b"AVWK")
        fh.write(struct.pack("<HxxI", _VERSION, weak.size))
        fh.write(_binary_bytes(weak, "weak labels"))


def read_weak(path) -> np.ndarray:
    r = _Reader(path)
    r.expect_magic(b"AVWK")
    (classes,) = r.unpack("<xxI", "weak header")
    payload = r.take(classes, "weak payload")
    r.done()
    arr = np.frombuffer(payload, dtype=np.uint8).copy()
    if not np.isin(arr, (0, 1)).all():
        raise FormatError(f"{path}: non-binary weak labels")
    return arr


# ----- dense annotations -----


def write_dense(path, dense: DenseAnnotation) -> None:
    t, classes = dense.audio.shape
    with open(path, "wb") as fh:
        fh.write(b"AVDN")
        fh.write(struct.pack("<HxxII", _VERSION, t, classes))
        fh.write(_binary_bytes(dense.audio, "dense audio"))
        fh.write(_binary_bytes(dense.visual, "dense visual"))


def read_dense(path) -> DenseAnnotation:
    r = _Reader(path)
    r.expect_magic(b"AVDN")
    t, classes = r.unpack("<xxII", "dense header")
    audio = np.frombuffer(r.take(t * classes, "dense audio"), dtype=np.uint8)
    visual = np.frombuffer(r.take(t * classes, "dense visual"), dtype=np.uint8)
    r.done()
    return DenseAnnotation(
        audio=audio.reshape(t, classes).copy(), visual=visual.reshape(t, classes).copy()
    )


# ----- predictions (one container per split) -----


def export_predictions(path, preds, threshold: float = 0.5) -> dict[str, tuple]:
    """Threshold a PredictionTensor set (p >= threshold) and write the container.

    Returns the binary matrices that were written.
    """
    if not 0.0 < threshold < 1.0:
        raise UsageError(f"threshold {threshold} outside (0, 1)")
    binary = {
        vid: (
            (p.p_audio >= threshold).astype(np.uint8),
            (p.p_visual >= threshold).astype(np.uint8),
        )
        for vid, p in preds.items()
    }
    write_predictions(path, binary)
    return binary


def write_predictions(path, preds: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    """preds: video id -> (binary audio T x C, binary visual T x C)."""
    with open(path, "wb") as fh:
        fh.write(b"AVPR")
        fh.write(struct.pack("<HxxI", _VERSION, len(preds)))
        for vid in sorted(preds):
            audio, visual = preds[vid]
            if audio.shape != visual.shape:
                raise FormatError(f"{vid}: prediction shapes differ")
            raw = vid.encode("utf-8")
            t, classes = audio.shape
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", t, classes))
            fh.write(_binary_bytes(audio, f"{vid} audio"))
            fh.write(_binary_bytes(visual, f"{vid} visual"))


def read_predictions(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    r = _Reader(path)
    r.expect_magic(b"AVPR")
    (count,) = r.unpack("<xxI", "prediction count")
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for _ in range(count):
        (id_len,) = r.unpack("<I", "id length")
        vid = r.take(id_len, "video id").decode("utf-8")
        t, classes = r.unpack("<II", "prediction header")
        audio = np.frombuffer(r.take(t * classes, "audio matrix"), dtype=np.uint8)
        visual = np.frombuffer(r.take(t * classes, "visual matrix"), dtype=np.uint8)
        out[vid] = (
            audio.reshape(t, classes).copy(),
            visual.reshape(t, classes).copy(),
        )
    r.done()
    return out


# ----- manifests and whole datasets -----


def write_manifest(path, entries: list[tuple[str, dict[str, str]]]) -> None:
    lines = []
    for vid, files in entries:
        lines.append(
            "\t".join([vid, files["audio"], files["visual"], files["weak"], files["dense"]])
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[tuple[str, dict[str, Path]]]:
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
        vid, audio, visual, weak, dense = parts
        entries.append(
            (
                vid,
                {
                    "audio": base / audio,
                    "visual": base / visual,
                    "weak": base / weak,
                    "dense": base / dense,
                },
            )
        )
    return entries


def save_dataset(dataset: Dataset, out_dir) -> None:
    out_dir = Path(out_dir)
    video_dir = out_dir / "videos"
    video_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        entries = []
        for video in dataset.split(split):
            names = {
                "audio": f"videos/{video.id}.audio.feat",
                "visual": f"videos/{video.id}.visual.feat",
                "weak": f"videos/{video.id}.weak",
                "dense": f"videos/{video.id}.dense",
            }
            write_features(out_dir / names["audio"], video.audio)
            write_features(out_dir / names["visual"], video.visual)
            write_weak(out_dir / names["weak"], video.weak)
            write_dense(out_dir / names["dense"], video.dense)
            entries.append((video.id, names))
        write_manifest(out_dir / f"{split}.txt", entries)


def load_split(manifest_path) -> list[SyntheticVideo]:
    videos = []
    for vid, files in read_manifest(manifest_path):
        videos.append(
            SyntheticVideo(
                id=vid,
                audio=read_features(files["audio"]),
                visual=read_features(files["visual"]),
                weak=read_weak(files["weak"]),
                dense=read_dense(files["dense"]),
            )
        )
    return videos
