import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coips.errors import ConfigError
from coips.labels import Quality, QualityLabel
from coips.manifest import ManifestRow, read_manifest, write_manifest
from coips.splits import HoldoutScheme, kfold, proportional_sizes, split_dataset
from coips.synthgen import (
    SynthSpec,
    ellipse_mask,
    generate_corpus,
    generate_sample,
    laplacian_energy,
    quality_of,
    sample_params,
)


def ids(n):
    return [f"id{i:04d}" for i in range(n)]


class TestSplits:
    def test_table3_proportions_100(self):
        sizes = split_dataset(ids(100), HoldoutScheme()).sizes()
        assert [sizes[n] for n in ("train", "test", "internal_test", "external_test")] == [66, 28, 3, 3]

    def test_kfold_10_by_5(self):
        folds = kfold(ids(10), 5, seed=3)
        assert [len(f) for f in folds] == [2] * 5
        flat = [s for f in folds for s in f]
        assert sorted(flat) == ids(10) and len(set(flat)) == 10

    def test_same_seed_same_split(self):
        a = split_dataset(ids(50), HoldoutScheme(), seed=9).assignment
        assert a == split_dataset(list(reversed(ids(50))), HoldoutScheme(), seed=9).assignment

    def test_new_seed_keeps_sizes(self):
        a = split_dataset(ids(57), HoldoutScheme(), seed=1)
        b = split_dataset(ids(57), HoldoutScheme(), seed=2)
        assert a.sizes() == b.sizes() and a.assignment != b.assignment

    def test_counts_exceeding_population(self):
        with pytest.raises(ConfigError):
            split_dataset(ids(10), HoldoutScheme(counts=(8, 2, 1, 0)))

    def test_leftover_unused(self):
        sizes = split_dataset(ids(10), HoldoutScheme(counts=(5, 2, 1, 0))).sizes()
        assert sizes["unused"] == 2

    def test_errors(self):
        with pytest.raises(ConfigError):
            split_dataset([], HoldoutScheme())
        with pytest.raises(ConfigError):
            kfold(ids(3), 5, 0)
        with pytest.raises(ConfigError):
            split_dataset(["a", "a", "b"], HoldoutScheme())

    @given(st.integers(1, 300), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_holdout_is_partition(self, n, seed):
        split = split_dataset(ids(n), HoldoutScheme(), seed=seed)
        assert sorted(split.assignment) == ids(n)
        assert sum(split.sizes().values()) == n

    @given(st.integers(2, 12), st.integers(0, 200), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_kfold_is_partition(self, k, extra, seed):
        n = k + extra
        folds = kfold(ids(n), k, seed)
        flat = [s for f in folds for s in f]
        assert sorted(flat) == ids(n)
        assert max(map(len, folds)) - min(map(len, folds)) <= 1

    @given(st.integers(0, 1000), st.lists(st.floats(0.01, 100), min_size=1, max_size=6))
    @settings(max_examples=80, deadline=None)
    def test_proportional_sizes_sum_and_rounding(self, total, weights):
        sizes = proportional_sizes(total, weights)
        exact = np.asarray(weights) * total / sum(weights)
        assert sum(sizes) == total
        assert np.all(np.abs(np.asarray(sizes) - exact) < 1.0 + 1e-9)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        rows = [
            ManifestRow("a", tmp_path / "img" / "a.png", Quality.GRADABLE, tmp_path / "m" / "a.png", 3.0, "train"),
            ManifestRow("b_docta", tmp_path / "b.png", None, None, 6.0, "", layer="deep", sibling_id="b_socta"),
        ]
        write_manifest(rows, tmp_path / "manifest.csv")
        assert read_manifest(tmp_path / "manifest.csv") == rows

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("source_id,image_path\na,x.png\na,y.png\n")
        with pytest.raises(ConfigError, match=":3:"):
            read_manifest(p)

    def test_bad_class(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("source_id,class,image_path\na,Excellent,x.png\n")
        with pytest.raises(ConfigError, match=":2:"):
            read_manifest(p)


class TestQualityLabel:
    def test_parse(self):
        assert Quality.parse("Gradable") == Quality.GRADABLE
        assert Quality.parse("0") == Quality.UNGRADABLE
        assert Quality.OUTSTANDING.label == "Outstanding"

    def test_probs_validation(self):
        QualityLabel(Quality.GRADABLE, (0.2, 0.5, 0.3))
        with pytest.raises(ValueError):
            QualityLabel(Quality.GRADABLE, (0.2, 0.5, 0.2))
        with pytest.raises(ValueError):
            QualityLabel(Quality.GRADABLE, (-0.1, 0.6, 0.5))

    def test_segmentable(self):
        assert not QualityLabel(Quality.UNGRADABLE).segmentable
        assert QualityLabel(Quality.GRADABLE).segmentable


class TestSynth:
    spec = SynthSpec(counts=(20, 20, 20))

    def test_deterministic(self):
        a = generate_sample(self.spec, Quality.GRADABLE, 5)
        b = generate_sample(self.spec, Quality.GRADABLE, 5)
        np.testing.assert_array_equal(a[0].pixels, b[0].pixels)
        np.testing.assert_array_equal(a[2].pixels, b[2].pixels)

    def test_labels_follow_recipe(self):
        for klass in Quality:
            for i in range(30):
                assert quality_of(sample_params(self.spec, klass, i), self.spec) == klass

    def test_offset_is_ungradable(self):
        seen = 0
        n = self.spec.image_size
        for i in range(60):
            p = sample_params(self.spec, Quality.UNGRADABLE, i)
            off = math.hypot(p.center[0] - (n - 1) / 2, p.center[1] - (n - 1) / 2) / n
            if off > self.spec.offset_threshold:
                seen += 1
                assert generate_sample(self.spec, Quality.UNGRADABLE, i)[1].category == Quality.UNGRADABLE
        assert seen > 10

    @pytest.mark.parametrize("axes", [(5, 5), (6, 11), (9.5, 14), (20, 7)])
    def test_ellipse_area_close_to_formula(self, axes):
        for angle in (0.0, 0.4, 1.3):
            m = ellipse_mask(64, (31.7, 32.2), axes, angle)
            assert abs(m.sum() / (math.pi * axes[0] * axes[1]) - 1) < 0.03

    def test_images_in_unit_range(self):
        for klass in Quality:
            img = generate_sample(self.spec, klass, 1)[0]
            assert img.pixels.shape == (1, 64, 64)
            assert img.pixels.min() >= 0 and img.pixels.max() <= 1

    def test_blur_lowers_sharpness(self):
        def energy(klass, want_blur):
            out = []
            for i in range(40):
                p = sample_params(self.spec, klass, i)
                if (p.blur_sigma > 0) == want_blur:
                    out.append(laplacian_energy(generate_sample(self.spec, klass, i)[0].pixels[0]))
            return np.mean(out)

        sharp = energy(Quality.OUTSTANDING, False)
        assert energy(Quality.UNGRADABLE, True) < 0.5 * sharp
        assert energy(Quality.GRADABLE, True) < sharp

    def test_corpus(self, tmp_path):
        rows = generate_corpus(self.spec, tmp_path)
        assert len(rows) == 60
        assert read_manifest(tmp_path / "manifest.csv") == rows
        assert all(Path(r.image_path).exists() and Path(r.mask_path).exists() for r in rows)
        for klass in Quality:
            splits = {r.split for r in rows if r.klass == klass}
            assert {"train", "test"} <= splits

    def test_empty_corpus(self, tmp_path):
        assert generate_corpus(SynthSpec(counts=(0, 0, 0)), tmp_path / "c") == []
        assert not (tmp_path / "c").exists()

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            SynthSpec(counts=(1, -1, 1))
        with pytest.raises(ConfigError):
            SynthSpec(offset_range=(0.1, 0.2))

    def test_spec_dict_roundtrip(self):
        assert SynthSpec.from_dict(self.spec.to_dict()) == self.spec
