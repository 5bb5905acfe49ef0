"""Binary file formats, dataset loaders, and the synthetic toy generator.

Formats (all little-endian, bit-exact round trips):

* ``.fmat``  — "FMAT", u32 version=1, u64 n, u64 d, u8 has_labels,
  n*d float32 row-major, optional n int32 labels, then per-row ids as
  u32 byte length + UTF-8 bytes.
* ``.csrg``  — "CSRG", u32 version=1, u64 rows, u64 nnz,
  (rows+1) u64 row pointers, nnz u64 column indices, nnz float32 values.
* ``.ckpt``  — "GDNC", u32 version=1, u32 layer count L, (L+1) u64 dims,
  per layer W1 then W2 float32 payloads, u32-length-prefixed UTF-8
  key=value config block, 32-byte SHA-256 of the feature file contents.
"""

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import CSRMatrix, l2_normalize_rows


class FormatError(ValueError):
    """Malformed binary artifact; message carries the failing byte offset."""


class DataError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """The fixed PRNG used everywhere sampling/initialization happens.

    PCG64 with an integer seed: a fixed algorithm, so artifacts are
    reproducible across platforms for a given seed.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass
class FeatureMatrix:
    data: np.ndarray                       # n x d float32
    ids: list[str]
    labels: np.ndarray | None = None       # int32 per row, optional

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if not np.all(np.isfinite(self.data)):
            raise DataError("feature matrix contains non-finite values")
        if len(self.ids) != self.data.shape[0]:
            raise DataError("id count does not match row count")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("instance ids must be unique")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
            if self.labels.shape[0] != self.data.shape[0]:
                raise DataError("label count does not match row count")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def _read_exact(f, nbytes, what):
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"truncated payload reading {what} at byte offset {f.tell() - len(buf)}")
    return buf


def write_fmat(fm: FeatureMatrix, path):
    with open(path, "wb") as f:
        f.write(b"FMAT")
        f.write(struct.pack("<IQQB", 1, fm.n, fm.d, 1 if fm.labels is not None else 0))
        f.write(fm.data.astype("<f4").tobytes())
        if fm.labels is not None:
            f.write(fm.labels.astype("<i4").tobytes())
        for s in fm.ids:
            b = s.encode("utf-8")
            f.write(struct.pack("<I", len(b)))
            f.write(b)


def read_fmat(path) -> FeatureMatrix:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != b"FMAT":
            raise FormatError("bad magic at byte offset 0 (expected FMAT)")
        version, n, d, has_labels = struct.unpack("<IQQB", _read_exact(f, 21, "fmat header"))
        if version != 1:
            raise FormatError(f"unsupported fmat version {version} at byte offset 4")
        data = np.frombuffer(_read_exact(f, 4 * n * d, "fmat payload"), dtype="<f4").reshape(n, d)
        labels = None
        if has_labels:
            labels = np.frombuffer(_read_exact(f, 4 * n, "fmat labels"), dtype="<i4")
        ids = []
        for _ in range(n):
            (ln,) = struct.unpack("<I", _read_exact(f, 4, "id length"))
            ids.append(_read_exact(f, ln, "id bytes").decode("utf-8"))
    return FeatureMatrix(data.copy(), ids, None if labels is None else labels.copy())


def write_csrg(mat: CSRMatrix, path):
    with open(path, "wb") as f:
        f.write(b"CSRG")
        f.write(struct.pack("<IQQ", 1, mat.rows, mat.nnz))
        f.write(mat.indptr.astype("<u8").tobytes())
        f.write(mat.indices.astype("<u8").tobytes())
        f.write(mat.data.astype("<f4").tobytes())


def read_csrg(path, cols: int | None = None) -> CSRMatrix:
    """Load a .csrg file. The format stores only the row count; square is
    assumed unless `cols` is given (needed for the N x B code matrix Z)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != b"CSRG":
            raise FormatError("bad magic at byte offset 0 (expected CSRG)")
        version, rows, nnz = struct.unpack("<IQQ", _read_exact(f, 20, "csrg header"))
        if version != 1:
            raise FormatError(f"unsupported csrg version {version} at byte offset 4")
        indptr = np.frombuffer(_read_exact(f, 8 * (rows + 1), "row pointers"), dtype="<u8")
        indices = np.frombuffer(_read_exact(f, 8 * nnz, "column indices"), dtype="<u8")
        values = np.frombuffer(_read_exact(f, 4 * nnz, "values"), dtype="<f4")
    if cols is None:
        cols = rows
    return CSRMatrix(int(rows), int(cols), indptr.astype(np.int64),
                     indices.astype(np.int64), values.copy())


def file_sha256(path) -> bytes:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.digest()


def write_ckpt(layers, dims, config: dict, feature_hash: bytes, path):
    """layers: list of (W1, W2) arrays; dims: layer widths [d0..dL]."""
    cfg_text = "\n".join(f"{k}={v}" for k, v in sorted(config.items()))
    cfg_bytes = cfg_text.encode("utf-8")
    if len(feature_hash) != 32:
        raise ValueError("feature hash must be 32 bytes (sha256)")
    with open(path, "wb") as f:
        f.write(b"GDNC")
        f.write(struct.pack("<II", 1, len(layers)))
        f.write(np.asarray(dims, dtype="<u8").tobytes())
        for w1, w2 in layers:
            f.write(np.ascontiguousarray(w1, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(w2, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(feature_hash)


def read_ckpt(path):
    """Returns (layers, dims, config dict, feature hash)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != b"GDNC":
            raise FormatError("bad magic at byte offset 0 (expected GDNC)")
        version, n_layers = struct.unpack("<II", _read_exact(f, 8, "ckpt header"))
        if version != 1:
            raise FormatError(f"unsupported ckpt version {version} at byte offset 4")
        dims = np.frombuffer(_read_exact(f, 8 * (n_layers + 1), "dims"), dtype="<u8").astype(int)
        layers = []
        for l in range(n_layers):
            shape = (dims[l], dims[l + 1])
            nbytes = 4 * shape[0] * shape[1]
            w1 = np.frombuffer(_read_exact(f, nbytes, f"W1[{l}]"), dtype="<f4").reshape(shape)
            w2 = np.frombuffer(_read_exact(f, nbytes, f"W2[{l}]"), dtype="<f4").reshape(shape)
            layers.append((w1.copy(), w2.copy()))
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        cfg_text = _read_exact(f, cfg_len, "config block").decode("utf-8")
        feature_hash = _read_exact(f, 32, "feature hash")
    config = {}
    for line in cfg_text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            config[k] = v
    return layers, list(dims), config, feature_hash


# ---------------------------------------------------------------------------
# Toy dataset: 2-D points along the stroke skeletons of the letters P A M I.
# Each letter lives in a unit-width box of height 2; letters laid out left to
# right with a 0.6 gap so neighboring letters genuinely compete under raw
# Euclidean distance.

_LETTER_STROKES = {
    # P: vertical stem + polyline bump approximating the bowl
    "P": [
        [(0.0, 0.0), (0.0, 2.0)],
        [(0.0, 2.0), (0.5, 1.95), (0.8, 1.75), (0.8, 1.45), (0.5, 1.25), (0.0, 1.2)],
    ],
    # A: two diagonals and a crossbar
    "A": [
        [(0.0, 0.0), (0.5, 2.0)],
        [(0.5, 2.0), (1.0, 0.0)],
        [(0.2, 0.8), (0.8, 0.8)],
    ],
    # M: four strokes
    "M": [
        [(0.0, 0.0), (0.0, 2.0)],
        [(0.0, 2.0), (0.5, 0.9)],
        [(0.5, 0.9), (1.0, 2.0)],
        [(1.0, 2.0), (1.0, 0.0)],
    ],
    # I: a single stem
    "I": [
        [(0.0, 0.0), (0.0, 2.0)],
    ],
}

_LETTER_ORDER = ["P", "A", "M", "I"]
_LETTER_OFFSETS = {"P": 0.0, "A": 2.0, "M": 4.0, "I": 6.0}

# tall, narrow glyphs: the within-letter extent has to dwarf the
# between-letter gap, otherwise plain Euclidean distance already solves
# the dataset and there is nothing for a manifold method to demonstrate
_Y_SCALE = 8.0


def _letter_segments(letter):
    segs = []
    scale = np.array([1.0, _Y_SCALE])
    for poly in _LETTER_STROKES[letter]:
        for a, b in zip(poly[:-1], poly[1:]):
            segs.append((np.asarray(a, float) * scale,
                         np.asarray(b, float) * scale))
    return segs


def generate_toy(points_per_letter: int = 375, noise_sigma: float = 0.05,
                 seed: int = 0) -> FeatureMatrix:
    """Sample 2-D points uniformly along the PAMI letter skeletons."""
    if points_per_letter < 1:
        raise ValueError("points_per_letter must be >= 1")
    rng = make_rng(seed)
    rows, labels, ids = [], [], []
    for label, letter in enumerate(_LETTER_ORDER):
        segs = _letter_segments(letter)
        lengths = np.array([np.linalg.norm(b - a) for a, b in segs])
        probs = lengths / lengths.sum()
        seg_choice = rng.choice(len(segs), size=points_per_letter, p=probs)
        ts = rng.random(points_per_letter)
        offset = np.array([_LETTER_OFFSETS[letter], 0.0])
        for idx, (s, t) in enumerate(zip(seg_choice, ts)):
            a, b = segs[s]
            p = a + t * (b - a) + offset
            if noise_sigma > 0:
                p = p + rng.normal(0.0, noise_sigma, size=2)
            rows.append(p)
            labels.append(label)
            ids.append(f"{letter}{idx:04d}")
    return FeatureMatrix(np.asarray(rows, dtype=np.float32), ids,
                         np.asarray(labels, dtype=np.int32))


def toy_stroke_segments(letter: str):
    """Skeleton segments (with letter offset applied) for nearest-stroke checks."""
    offset = np.array([_LETTER_OFFSETS[letter], 0.0])
    return [(a + offset, b + offset) for a, b in _letter_segments(letter)]


# ---------------------------------------------------------------------------
# ORL face dataset: 40 subjects x 10 PGM images of 112x92.

_ORL_H, _ORL_W = 112, 92


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; comments start with '#'
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.shape[0] != width * height:
        raise DataError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width), maxval


def load_orl(directory) -> FeatureMatrix:
    """Flatten each 112x92 image, scale to [0,1], l2-normalize the row."""
    directory = Path(directory)
    rows, labels, ids = [], [], []
    for subject in range(1, 41):
        subj_dir = directory / f"s{subject}"
        if not subj_dir.is_dir():
            raise DataError(f"missing subject directory {subj_dir}")
        for img in range(1, 11):
            path = subj_dir / f"{img}.pgm"
            if not path.is_file():
                raise DataError(f"missing image {path}")
            pixels, maxval = _read_pgm(path)
            if pixels.shape != (_ORL_H, _ORL_W):
                raise DataError(f"{path}: expected {_ORL_H}x{_ORL_W}, got {pixels.shape}")
            rows.append(pixels.reshape(-1).astype(np.float32) / float(maxval))
            labels.append(subject - 1)
            ids.append(f"s{subject}/{img}")
    data = l2_normalize_rows(np.asarray(rows, dtype=np.float32))
    return FeatureMatrix(data, ids, np.asarray(labels, dtype=np.int32))
