"""Dataset directories, stratified splits and binary checkpoints.

Dataset directory layout::

    manifest.txt          flat key-value lines (keys may repeat)
    nodes.tsv             node_id <TAB> type <TAB> label or '-'
    edges_<relation>.tsv  src_id <TAB> dst_id
    features_<type>.txt   'rows cols' header then one row of floats per line;
                          a header 'rows rows identity' means one-hot ids, no body

Manifest keys::

    name <text>
    target_type <type>
    num_classes <int>
    node_type <type> <count> <feature_dim>
    relation <name> <src_type> <dst_type>
    metapath <name> <step> [<step> ...]     (step '~R' walks R backwards)
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffnum import make_rng
from .hin import Hin, MetaPath, Relation
from .local_schema import FeatureStore


class DataError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ------------------------------------------------------------------ manifest


@dataclass
class DatasetManifest:
    target_type: str
    num_classes: int
    node_types: dict[str, tuple[int, int]]  # type -> (count, feature_dim)
    relations: list[Relation]
    metapaths: list[MetaPath]
    name: str = "dataset"

    def to_text(self) -> str:
        lines = [f"name {self.name}", f"target_type {self.target_type}",
                 f"num_classes {self.num_classes}"]
        lines += [f"node_type {t} {n} {d}" for t, (n, d) in self.node_types.items()]
        lines += [f"relation {r.name} {r.src_type} {r.dst_type}" for r in self.relations]
        lines += [f"metapath {mp.name} {mp.spec()}" for mp in self.metapaths]
        return "\n".join(lines) + "\n"


def read_kv(path: Path) -> list[tuple[str, list[str], int]]:
    """``(key, values, line_number)`` for each non-blank, non-comment line."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *values = line.split()
        out.append((key, values, lineno))
    return out


def parse_manifest(path: Path) -> DatasetManifest:
    fields: dict = {"node_types": {}, "relations": [], "metapaths": []}
    try:
        for key, vals, lineno in read_kv(path):
            where = f"{path}:{lineno}"
            if key == "name":
                fields["name"] = " ".join(vals)
            elif key == "target_type":
                fields["target_type"] = vals[0]
            elif key == "num_classes":
                fields["num_classes"] = int(vals[0])
            elif key == "node_type":
                fields["node_types"][vals[0]] = (int(vals[1]), int(vals[2]))
            elif key == "relation":
                fields["relations"].append(Relation(vals[0], vals[1], vals[2]))
            elif key == "metapath":
                fields["metapaths"].append(MetaPath.parse(vals[0], " ".join(vals[1:])))
            else:
                raise DataError(f"{where}: unknown manifest key {key!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}:{lineno}: malformed manifest line ({exc})") from None
    for required in ("target_type", "num_classes"):
        if required not in fields:
            raise DataError(f"{path}: manifest is missing {required!r}")
    return DatasetManifest(**fields)


# ------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    hin: Hin
    features: FeatureStore
    labels: np.ndarray  # per target node; -1 when unknown
    manifest: DatasetManifest
    node_ids: dict[str, list[str]] = field(default_factory=dict)

    @property
    def target_ids(self) -> list[str]:
        return self.node_ids[self.hin.target_type]


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing file {path}")
    return path


def read_features(path: Path, rows: int, cols: int) -> np.ndarray:
    with open(_require(path), encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) < 2:
            raise DataError(f"{path}:1: expected 'rows cols' header")
        r, c = int(header[0]), int(header[1])
        if (r, c) != (rows, cols):
            raise DataError(f"{path}:1: feature shape {r}x{c}, manifest declares {rows}x{cols}")
        if len(header) > 2 and header[2] == "identity":
            if r != c:
                raise DataError(f"{path}:1: identity features must be square")
            return np.eye(r)
        body = fh.read()
    x = np.loadtxt(io.StringIO(body), dtype=np.float64, ndmin=2) if r else np.zeros((0, c))
    if x.size == 0:
        x = np.zeros((r, c)) if r == 0 or c == 0 else x
    if x.shape != (r, c):
        raise DataError(f"{path}: read {x.shape[0]}x{x.shape[1]} feature values, header says {r}x{c}")
    return x


def load_dataset(directory) -> Dataset:
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    manifest = parse_manifest(_require(root / "manifest.txt"))
    ids: dict[str, list[str]] = {t: [] for t in manifest.node_types}
    index: dict[str, tuple[str, int]] = {}
    raw_labels: list[int] = []
    nodes_path = _require(root / "nodes.tsv")
    for lineno, line in enumerate(nodes_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{nodes_path}:{lineno}: expected 3 tab-separated fields")
        nid, t, lab = parts
        if t not in ids:
            raise DataError(f"{nodes_path}:{lineno}: unknown node type {t!r}")
        if nid in index:
            raise DataError(f"{nodes_path}:{lineno}: duplicate node id {nid!r}")
        index[nid] = (t, len(ids[t]))
        ids[t].append(nid)
        if t == manifest.target_type:
            y = -1 if lab == "-" else int(lab)
            if y >= manifest.num_classes or y < -1:
                raise DataError(f"{nodes_path}:{lineno}: label {y} outside [0, {manifest.num_classes})")
            raw_labels.append(y)
    for t, (count, _) in manifest.node_types.items():
        if len(ids[t]) != count:
            raise DataError(f"{nodes_path}: {len(ids[t])} nodes of type {t!r}, manifest declares {count}")

    edges = {}
    for rel in manifest.relations:
        path = _require(root / f"edges_{rel.name}.tsv")
        pairs = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'src<TAB>dst'")
            (ts, i), (td, j) = (index.get(parts[0], (None, -1)), index.get(parts[1], (None, -1)))
            if ts != rel.src_type or td != rel.dst_type:
                raise DataError(
                    f"{path}:{lineno}: edge {parts[0]}->{parts[1]} does not connect "
                    f"{rel.src_type}->{rel.dst_type}"
                )
            pairs.append((i, j))
        edges[rel.name] = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    feats = {t: read_features(root / f"features_{t}.txt", n, d)
             for t, (n, d) in manifest.node_types.items()}
    hin = Hin({t: n for t, (n, _) in manifest.node_types.items()}, list(manifest.relations),
              edges, manifest.target_type)
    for mp in manifest.metapaths:
        mp.validate(hin)
    return Dataset(hin, FeatureStore(feats), np.asarray(raw_labels, dtype=np.int64), manifest, ids)


def _format_row(row: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in row)


def write_dataset(ds: Dataset, directory) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.txt").write_text(ds.manifest.to_text(), encoding="utf-8")
    lines = []
    for t in ds.hin.node_types:
        for i, nid in enumerate(ds.node_ids[t]):
            lab = "-"
            if t == ds.hin.target_type and ds.labels[i] >= 0:
                lab = str(int(ds.labels[i]))
            lines.append(f"{nid}\t{t}\t{lab}")
    (root / "nodes.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for rel in ds.hin.relations:
        src, dst = ds.node_ids[rel.src_type], ds.node_ids[rel.dst_type]
        body = "".join(f"{src[i]}\t{dst[j]}\n" for i, j in ds.hin.edges[rel.name])
        (root / f"edges_{rel.name}.tsv").write_text(body, encoding="utf-8")
    for t in ds.hin.node_types:
        x = ds.features[t]
        with open(root / f"features_{t}.txt", "w", encoding="utf-8") as fh:
            if ds.features.is_identity(t):
                fh.write(f"{x.shape[0]} {x.shape[1]} identity\n")
            else:
                fh.write(f"{x.shape[0]} {x.shape[1]}\n")
                for row in x:
                    fh.write(_format_row(row) + "\n")
    return root


# -------------------------------------------------------------------- splits


@dataclass
class SplitSet:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def unlabeled(self) -> np.ndarray:
        return np.sort(np.concatenate([self.val, self.test]))

    def validate(self, n: int) -> None:
        parts = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise DataError("train/validation/test sets overlap")
        if set().union(*parts) != set(range(n)):
            raise DataError("splits do not cover every target node")


def make_splits(labels, n_train_per_class: int, n_val_per_class: int = 50, seed: int = 0) -> SplitSet:
    """Per-class sampling without replacement; everything left over is test."""
    labels = np.asarray(labels, dtype=np.int64)
    if (labels < 0).any():
        raise DataError("every target node needs a label to be split")
    rng = make_rng(seed)
    train, val, test = [], [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        need = n_train_per_class + n_val_per_class
        if len(members) < need:
            raise DataError(f"class {c} has {len(members)} nodes, needs at least {need}")
        order = rng.permutation(members)
        train.append(order[:n_train_per_class])
        val.append(order[n_train_per_class:need])
        test.append(order[need:])
    cat = lambda xs: np.sort(np.concatenate(xs)).astype(np.int64)
    return SplitSet(cat(train), cat(val), cat(test))


def write_splits(splits: SplitSet, ids: list[str], path) -> None:
    rows = [(i, "train") for i in splits.train] + [(i, "val") for i in splits.val] \
        + [(i, "test") for i in splits.test]
    rows.sort()
    Path(path).write_text("".join(f"{ids[i]}\t{s}\n" for i, s in rows), encoding="utf-8")


def read_splits(path, ids: list[str]) -> SplitSet:
    pos = {nid: i for i, nid in enumerate(ids)}
    groups: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for lineno, line in enumerate(Path(_require(Path(path))).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        nid, which = line.split("\t")
        if nid not in pos or which not in groups:
            raise DataError(f"{path}:{lineno}: bad split entry {line!r}")
        groups[which].append(pos[nid])
    s = SplitSet(*(np.sort(np.asarray(groups[k], dtype=np.int64)) for k in ("train", "val", "test")))
    s.validate(len(ids))
    return s


# --------------------------------------------------------------- checkpoints

MAGIC = "HGPFCKPT"
VERSION = 1


def save_checkpoint(params: dict[str, np.ndarray], path, meta: dict[str, str] | None = None) -> None:
    """Text header (magic, version, metadata, tensor table) then little-endian float64 data."""
    header = [f"{MAGIC} {VERSION}"]
    for k, v in (meta or {}).items():
        header.append(f"meta {k} {v}")
    blobs, offset = [], 0
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")
        shape = ",".join(str(s) for s in arr.shape) or "-"
        header.append(f"tensor {name} {shape} {offset} {arr.nbytes}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    raw = Path(path).read_bytes()
    first, _, _ = raw.partition(b"\n")
    parts = first.decode("utf-8", errors="replace").split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if parts[1] != str(VERSION):
        raise CheckpointError(f"{path}: checkpoint version {parts[1]!r}, expected {VERSION}")
    marker = b"\nend\n"
    cut = raw.find(marker)
    if cut < 0:
        raise CheckpointError(f"{path}: truncated header")
    payload = raw[cut + len(marker):]
    meta: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    for line in raw[:cut].decode("utf-8").splitlines()[1:]:
        kind, *rest = line.split(" ")
        if kind == "meta":
            meta[rest[0]] = " ".join(rest[1:])
        elif kind == "tensor":
            name, shape, offset, nbytes = rest
            offset, nbytes = int(offset), int(nbytes)
            if offset + nbytes > len(payload):
                raise CheckpointError(f"{path}: truncated data for tensor {name!r}")
            dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
            arr = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=offset)
            params[name] = arr.reshape(dims).astype(np.float64)
        else:
            raise CheckpointError(f"{path}: unknown header line {line!r}")
    return params, meta
