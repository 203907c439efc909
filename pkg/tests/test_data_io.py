import numpy as np
import pytest

from hgpf import diffnum as dn
from hgpf.data_io import (CheckpointError, DataError, SplitSet, load_checkpoint, load_dataset,
                          make_splits, parse_manifest, read_splits, save_checkpoint, write_dataset,
                          write_splits)
from hgpf.synthetic import make_acm_like, make_dblp_like, make_random_toy

ACM_MANIFEST = """name acm
target_type P
num_classes 3
node_type A 7167 7167
node_type P 4019 1902
node_type S 60 60
relation PA P A
relation PS P S
metapath PAP PA ~PA
metapath PSP PS ~PS
"""


def test_acm_manifest(tmp_path):
    p = tmp_path / "manifest.txt"
    p.write_text(ACM_MANIFEST)
    m = parse_manifest(p)
    assert {t: n for t, (n, _) in m.node_types.items()} == {"A": 7167, "P": 4019, "S": 60}
    assert [mp.name for mp in m.metapaths] == ["PAP", "PSP"] and m.num_classes == 3
    assert [(r.src_type, r.dst_type) for r in m.relations] == [("P", "A"), ("P", "S")]


def test_dblp_metapaths():
    assert [mp.name for mp in make_dblp_like(n_authors=60, n_papers=80).manifest.metapaths] == \
        ["APA", "APVPA", "APTPA"]


def acm_sized_labels():
    return np.repeat([0, 1, 2], [1340, 1340, 1339])


def test_acm_split_sizes():
    s20 = make_splits(acm_sized_labels(), 20, 50, seed=0)
    assert (len(s20.train), len(s20.val), len(s20.test)) == (60, 150, 3809)
    assert len(make_splits(acm_sized_labels(), 50, 50, seed=0).test) == 3719


def test_exact_population_gives_empty_test():
    s = make_splits(np.repeat([0, 1], 5), 2, 3, seed=1)
    assert s.test.size == 0 and len(s.train) == 4 and len(s.val) == 6


def test_split_errors_and_determinism():
    labels = np.repeat([0, 1], 10)
    with pytest.raises(DataError):
        make_splits(labels, 6, 5)
    a, b = make_splits(labels, 2, 3, seed=4), make_splits(labels, 2, 3, seed=4)
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("train", "val", "test"))
    assert not np.array_equal(a.train, make_splits(labels, 2, 3, seed=5).train)


def test_split_file_round_trip(tmp_path):
    labels = np.repeat([0, 1, 2], 6)
    ids = [f"n{i}" for i in range(18)]
    s = make_splits(labels, 2, 2, seed=0)
    write_splits(s, ids, tmp_path / "s.tsv")
    back = read_splits(tmp_path / "s.tsv", ids)
    assert all(np.array_equal(getattr(s, k), getattr(back, k)) for k in ("train", "val", "test"))
    (tmp_path / "bad.tsv").write_text("n0\ttrain\nzz\ttest\n")
    with pytest.raises(DataError, match="bad.tsv:2"):
        read_splits(tmp_path / "bad.tsv", ids)


def compare(a, b):
    assert a.hin.node_counts == b.hin.node_counts
    assert a.hin.relations == b.hin.relations and a.hin.target_type == b.hin.target_type
    for r in a.hin.relations:
        assert np.array_equal(a.hin.edges[r.name], b.hin.edges[r.name])
    for t in a.hin.node_types:
        assert np.array_equal(a.features[t], b.features[t])
    assert np.array_equal(a.labels, b.labels)
    assert a.node_ids == b.node_ids
    assert a.manifest.to_text() == b.manifest.to_text()


@pytest.mark.parametrize("make", [
    lambda: make_random_toy(dn.make_rng(2), n_targets=9),
    lambda: make_acm_like(seed=1, n_papers=40, n_authors=50, n_subjects=5, vocab=12),
    lambda: make_dblp_like(seed=1, n_authors=30, n_papers=50, n_terms=20, n_venues=4, vocab=10),
])
def test_loader_round_trip(tmp_path, make):
    ds = make()
    write_dataset(ds, tmp_path / "d")
    compare(ds, load_dataset(tmp_path / "d"))


def test_empty_relation_file(tmp_path):
    ds = make_random_toy(dn.make_rng(0), n_targets=5, edge_prob=0.0)
    write_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.hin.edges["TA"].shape == (0, 2)


def test_loader_errors_carry_context(tmp_path):
    ds = make_random_toy(dn.make_rng(0), n_targets=5)
    root = write_dataset(ds, tmp_path / "d")
    with pytest.raises(DataError, match="does not exist"):
        load_dataset(tmp_path / "nope")
    (root / "edges_TA.tsv").write_text("t0\tt1\n")
    with pytest.raises(DataError, match="edges_TA.tsv:1"):
        load_dataset(root)
    write_dataset(ds, root)
    (root / "features_T.txt").write_text("5 9\n")
    with pytest.raises(DataError, match="features_T.txt:1"):
        load_dataset(root)
    write_dataset(ds, root)
    with open(root / "nodes.tsv", "a") as fh:
        fh.write("q0\tQ\t-\n")
    with pytest.raises(DataError, match="nodes.tsv:.*unknown node type"):
        load_dataset(root)
    write_dataset(ds, root)
    (root / "edges_TB.tsv").unlink()
    with pytest.raises(DataError, match="missing file"):
        load_dataset(root)


def test_checkpoint_round_trip(tmp_path):
    rng = dn.make_rng(0)
    params = {"a.W": rng.normal(size=(3, 4)), "b": rng.normal(size=5), "s": np.array(2.5),
              "empty": np.zeros((0, 3))}
    save_checkpoint(params, tmp_path / "c.ckpt", {"kind": "aux", "note": "two words"})
    back, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert list(back) == list(params) and meta == {"kind": "aux", "note": "two words"}
    for k in params:
        assert back[k].shape == params[k].shape and back[k].tobytes() == params[k].tobytes()


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint({"w": np.ones(4)}, path)
    raw = path.read_bytes()
    path.write_bytes(raw.replace(b"HGPFCKPT 1", b"HGPFCKPT 9"))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_bytes(b"garbage\n")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_split_validate():
    with pytest.raises(DataError):
        SplitSet(np.array([0]), np.array([0]), np.array([1])).validate(2)
    with pytest.raises(DataError):
        SplitSet(np.array([0]), np.array([1]), np.array([], int)).validate(3)
