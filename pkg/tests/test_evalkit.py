import numpy as np
import pytest

from insectcam import evalkit
from insectcam.errors import ConfigError, DataError, ManifestError, ShapeError
from insectcam.evalkit import (
    ManifestRecord,
    class_histogram,
    class_weights,
    compare_runs,
    confusion_matrix,
    evaluation_metrics,
    long_tail_profile,
    oversample,
    parse_manifest,
    split_sizes,
    stratified_split,
    synth_dataset,
    top1_accuracy,
)

APIS = "Apis mellifica"
BOMBUS = "Bombus terrestris"
VESPA = "Vespa crabro"


def _manifest(tree, per_class):
    lines = [f"img/{s.split()[0]}_{i}.ppm\t{s}" for s, n in per_class.items() for i in range(n)]
    return parse_manifest("\n".join(lines), tree)


def test_parse_manifest(tree):
    text = (
        "# path\tspecies\tmask\tsplit\n"
        f"a.ppm\t{APIS}\n"
        "\n"
        f"b.ppm\t{BOMBUS}\tb.pgm\n"
        f"c.ppm\t{VESPA}\t\ttest\n"
    )
    m = parse_manifest(text, tree)
    assert len(m) == 3
    assert m.records[1] == ManifestRecord("b.ppm", BOMBUS, "b.pgm", None)
    assert m.records[2].split == "test" and m.records[2].mask_path is None
    assert m.labels().tolist() == [0, 2, 4]


@pytest.mark.parametrize(
    "text, line",
    [
        (f"a.ppm\t{APIS}\nb.ppm\tApis cerana\n", 2),
        (f"a.ppm\t{APIS}\n# dup\na.ppm\t{BOMBUS}\n", 3),
        ("a.ppm\n", 1),
        (f"a.ppm\t{APIS}\tm.pgm\tholdout\n", 1),
        (f"a.ppm\t{APIS}\t\t\textra\n", 1),
    ],
)
def test_parse_manifest_errors_name_the_line(tree, text, line):
    with pytest.raises(ManifestError) as err:
        parse_manifest(text, tree)
    assert err.value.line == line


def test_load_manifest_resolves_relative_paths(tmp_path, tree):
    (tmp_path / "m.tsv").write_text(f"imgs/a.ppm\t{APIS}\n", encoding="utf-8")
    m = evalkit.load_manifest(tmp_path / "m.tsv", tree)
    assert m.resolve(m.records[0].image_path) == tmp_path / "imgs" / "a.ppm"
    with pytest.raises(DataError):
        evalkit.load_manifest(tmp_path / "missing.tsv", tree)


def test_manifest_write_round_trip(tmp_path, tree):
    m = parse_manifest(f"a.ppm\t{APIS}\tm.pgm\tval\nb.ppm\t{VESPA}\n", tree)
    again = evalkit.load_manifest(m.write(tmp_path / "out.tsv"), tree)
    assert again.records == m.records


@pytest.mark.parametrize(
    "n, expected",
    [(10, (6, 2, 2)), (7, (5, 1, 1)), (5, (3, 1, 1)), (1, (1, 0, 0)), (0, (0, 0, 0))],
)
def test_split_sizes(n, expected):
    sizes = split_sizes(n, (0.6, 0.2, 0.2))
    assert (sizes["train"], sizes["val"], sizes["test"]) == expected


def test_split_sizes_rejects_bad_ratios():
    with pytest.raises(ConfigError):
        split_sizes(10, (0.5, 0.2, 0.2))
    with pytest.raises(ConfigError):
        split_sizes(10, (1.2, -0.1, -0.1))


def test_stratified_split_invariants(tree):
    m = _manifest(tree, {APIS: 10, BOMBUS: 7, VESPA: 5})
    a = stratified_split(m, seed=3)
    assert a.counts[APIS] == {"train": 6, "val": 2, "test": 2}
    assert a.counts[BOMBUS] == {"train": 5, "val": 1, "test": 1}
    assert a.counts[VESPA] == {"train": 3, "val": 1, "test": 1}
    parts = [set(a.indices(s).tolist()) for s in evalkit.SPLITS]
    assert set.union(*parts) == set(range(len(m)))
    assert sum(len(p) for p in parts) == len(m)
    assert stratified_split(m, seed=3).tags == a.tags
    assert any(stratified_split(m, seed=s).tags != a.tags for s in range(4, 10))


def test_stratified_split_invariants_on_random_manifests(tree, rng):
    for trial in range(100):
        k = int(rng.integers(1, 7))
        chosen = [tree.species[i] for i in rng.choice(len(tree), size=k, replace=False)]
        sizes = {s: int(rng.integers(1, 40)) for s in chosen}
        rows = [(f"{s.replace(' ', '_')}_{i}.ppm", s) for s, n in sizes.items() for i in range(n)]
        order = rng.permutation(len(rows))
        m = parse_manifest("\n".join(f"{p}\t{s}" for p, s in (rows[j] for j in order)), tree)
        a = stratified_split(m, seed=trial)
        assert len(a.tags) == len(m) and set(a.tags) <= set(evalkit.SPLITS)
        for s, n in sizes.items():
            assert a.counts[s] == split_sizes(n)
            tagged = [t for r, t in zip(m.records, a.tags) if r.species == s]
            assert {name: tagged.count(name) for name in evalkit.SPLITS} == a.counts[s]
        assert stratified_split(m, seed=trial).tags == a.tags


def test_stratified_split_keeps_fixed_tags(tree):
    text = "\n".join([f"a{i}.ppm\t{APIS}" for i in range(9)] + [f"t.ppm\t{APIS}\t\ttest"])
    a = stratified_split(parse_manifest(text, tree), seed=0)
    assert a.tags[-1] == "test"
    assert a.counts[APIS]["test"] == 1 + 1


def test_stratified_split_errors(tree):
    m = _manifest(tree, {APIS: 3})
    with pytest.raises(DataError):
        stratified_split(m, classes=[APIS, BOMBUS])
    mixed = _manifest(tree, {APIS: 3, VESPA: 2})
    with pytest.raises(DataError):
        stratified_split(mixed, classes=[APIS])


def test_class_histogram(tree):
    balanced = class_histogram(_manifest(tree, {APIS: 4, BOMBUS: 4}))
    assert balanced.ratio == 1.0
    assert balanced.counts[APIS] == 4 and balanced.counts[VESPA] == 0
    skewed = class_histogram(_manifest(tree, {APIS: 20, BOMBUS: 2}))
    assert skewed.ratio == 10.0
    assert skewed.to_dict()["counts"][BOMBUS] == 2


def test_long_tail_profile():
    assert long_tail_profile(4, head=8, tail=2) == [8, 4, 2, 2]
    profile = long_tail_profile()
    assert len(profile) == 16 and profile[0] == 300 and min(profile) == 12
    assert evalkit.imbalance_ratio(profile) > 5
    with pytest.raises(ConfigError):
        long_tail_profile(4, head=2, tail=8)


def test_class_weights():
    counts = [100, 50, 10]
    w = class_weights(counts)
    assert w == pytest.approx([160 / 300, 160 / 150, 160 / 30])
    assert float(np.dot(w, counts)) == pytest.approx(sum(counts))
    assert np.allclose(class_weights([5, 5]), 1.0)
    with pytest.raises(DataError):
        class_weights([4, 0])


def test_oversample():
    labels = np.array([0, 0, 0, 0, 1, 2, 2])
    idx = oversample(labels, seed=1)
    assert np.bincount(labels[idx]).tolist() == [4, 4, 4]
    assert set(range(len(labels))) <= set(idx.tolist())
    assert np.array_equal(idx, oversample(labels, seed=1))
    with pytest.raises(DataError):
        oversample([], seed=0)


def test_top1_accuracy():
    assert top1_accuracy([0, 0, 1], [0, 1, 1]) == pytest.approx(2 / 3)
    with pytest.raises(ShapeError):
        top1_accuracy([0, 1], [0])
    with pytest.raises(DataError):
        top1_accuracy([], [])


def test_confusion_matrix():
    cm = confusion_matrix([0, 0, 1], [0, 1, 1], 2, species=("a", "b"))
    assert cm.counts.tolist() == [[1, 0], [1, 1]]
    assert cm.recall.tolist() == [1.0, 0.5]
    assert cm.precision.tolist() == [0.5, 1.0]
    assert cm.accuracy == pytest.approx(2 / 3)
    with pytest.raises(DataError):
        confusion_matrix([0, 2], [0, 1], 2)


def test_confusion_matrix_matches_cell_counts(rng):
    labels = rng.integers(0, 5, size=400)
    preds = np.where(rng.random(400) < 0.7, labels, rng.integers(0, 5, size=400))
    preds[preds == 3] = 2  # class 3 is never predicted
    cm = confusion_matrix(preds, labels, 6)
    expected = np.zeros((6, 6), dtype=np.int64)
    np.add.at(expected, (labels, preds), 1)
    assert np.array_equal(cm.counts, expected)
    support = expected.sum(axis=1)
    assert cm.recall[:5] == pytest.approx(np.diag(expected)[:5] / support[:5])
    assert cm.recall[5] == 0.0 and cm.precision[3] == 0.0 and cm.precision[5] == 0.0
    assert cm.accuracy == pytest.approx(top1_accuracy(preds, labels))
    assert class_weights(support[:5]) == pytest.approx(400 / (5 * support[:5]))


def test_empty_confusion_matrix():
    cm = confusion_matrix([], [], 3)
    assert cm.total == 0
    assert cm.recall.tolist() == [0.0, 0.0, 0.0]
    assert cm.never_predicted.tolist() == [False, False, False]


def test_never_predicted_class():
    cm = confusion_matrix([0, 0, 0], [0, 1, 1], 3)
    assert cm.never_predicted.tolist() == [False, True, False]
    assert cm.recall.tolist() == [1.0, 0.0, 0.0]
    metrics = evaluation_metrics(cm)
    assert metrics["per_class"][1] == {
        "species": "1",
        "support": 2,
        "recall": 0.0,
        "precision": 0.0,
        "never_predicted": True,
    }
    assert metrics["per_class"][2]["never_predicted"] is False


def test_confusion_outputs(tmp_path):
    cm = confusion_matrix([0, 0, 1], [0, 1, 1], 2, species=("a", "b"))
    text = cm.write_csv(tmp_path / "cm.csv").read_text(encoding="utf-8")
    assert text.splitlines() == ["true\\predicted,a,b", "a,1,0", "b,1,1"]
    assert cm.heatmap(cell=1).tolist() == [[255, 0], [128, 128]]
    assert cm.heatmap(cell=3).shape == (6, 6)
    assert cm.write_heatmap(tmp_path / "cm.ppm").exists()


def test_compare_runs():
    a = evaluation_metrics(confusion_matrix([0, 1, 1, 1], [0, 0, 1, 1], 2, ("x", "y")))
    b = evaluation_metrics(confusion_matrix([0, 0, 1, 0], [0, 0, 1, 1], 2, ("x", "y")))
    report = compare_runs(a, b)
    assert report["overall_delta"] == pytest.approx(0.0)
    assert [c["delta"] for c in report["per_class"]] == pytest.approx([0.5, -0.5])
    assert report["worst_regression"] == "y"
    assert compare_runs(a, a)["worst_regression"] is None
    other = evaluation_metrics(confusion_matrix([0], [0], 2, ("x", "z")))
    with pytest.raises(DataError):
        compare_runs(a, other)


@pytest.fixture(scope="module")
def small_dataset():
    return synth_dataset(k=4, n_per_class=3, image_size=32, seed=5)


def test_synth_dataset_shapes_and_determinism(small_dataset):
    d = small_dataset
    assert len(d) == 12
    assert d.full.shape == d.cropped.shape == (12, 32, 32, 3)
    assert d.labels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]
    again = synth_dataset(k=4, n_per_class=3, image_size=32, seed=5)
    assert np.array_equal(again.cropped, d.cropped) and np.array_equal(again.full, d.full)
    other = synth_dataset(k=4, n_per_class=3, image_size=32, seed=6)
    assert not np.array_equal(other.cropped, d.cropped)


def test_crop_box_covers_insect(small_dataset):
    for true_box, square in zip(small_dataset.true_boxes, small_dataset.crop_boxes):
        assert square.w == square.h
        assert square.x <= true_box.x and square.y <= true_box.y
        assert square.x + square.w >= true_box.x + true_box.w
        assert square.y + square.h >= true_box.y + true_box.h


def test_cropped_variant_magnifies_insect(small_dataset):
    def bright_fraction(images):
        return float((images.astype(np.float64).mean(axis=3) > 95).mean())

    assert bright_fraction(small_dataset.cropped) > 3 * bright_fraction(small_dataset.full)


def test_synth_long_tail_histogram(tree):
    profile = long_tail_profile(4, head=8, tail=2)
    data = synth_dataset(k=4, n_per_class=profile, image_size=16, seed=0)
    hist = class_histogram(data.manifest(tree))
    assert hist.counts.tolist()[:4] == profile
    assert hist.ratio == 4.0


def test_synth_dataset_rejects_bad_arguments():
    with pytest.raises(DataError):
        synth_dataset(k=17)
    with pytest.raises(DataError):
        synth_dataset(k=2, n_per_class=[1, 2, 3])


def test_synth_dataset_files_load_back(tmp_path, tree, small_dataset):
    synth_dataset(k=4, n_per_class=3, image_size=32, seed=5, out_dir=tmp_path)
    assert (tmp_path / "masks" / "00000.pgm").exists()
    manifest = evalkit.load_manifest(tmp_path / "manifest_cropped.tsv", tree)
    loaded = evalkit.manifest_tensors(manifest, (3, 32, 32))
    expected = small_dataset.tensors("cropped")
    assert np.array_equal(loaded.y, expected.y)
    assert np.array_equal(loaded.x, expected.x)
    full = evalkit.load_manifest(tmp_path / "manifest_full.tsv", tree)
    assert full.records[0].mask_path == "masks/00000.pgm"


def test_synth_classes_separate_by_nearest_centroid(tree):
    from sklearn.neighbors import NearestCentroid

    data = synth_dataset(k=16, n_per_class=20, image_size=32, seed=11, tree=tree)
    x = data.cropped.reshape(len(data), -1).astype(np.float64) / 255.0
    fit, held = np.arange(0, len(data), 2), np.arange(1, len(data), 2)
    clf = NearestCentroid().fit(x[fit], data.labels[fit])
    assert top1_accuracy(clf.predict(x[held]), data.labels[held]) >= 0.80
