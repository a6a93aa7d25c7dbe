"""Bundle format round-trips, stratified splits, and the synthetic generator."""

import numpy as np
import pytest
from scipy.stats import chi2
from sklearn.linear_model import LogisticRegression

from darcclip.data import (
    PRIDEMM_LABEL_COUNTS,
    PRIDEMM_TASKS,
    EmbeddingBundle,
    TaskSpec,
    pridemm_priors,
    read_bundle,
    stratified_split,
    synth_generate,
    write_bundle,
)
from darcclip.errors import ConfigurationError, DataFormatError
from darcclip.metrics import auroc_binary


def tiny_bundle(n=3, tasks=None, seed=0):
    rng = np.random.default_rng(seed)
    tasks = tasks or [TaskSpec("hate", 2)]
    labels = rng.integers(0, [t.n_classes for t in tasks], size=(n, len(tasks)))
    return EmbeddingBundle(
        images=rng.standard_normal((n, 1, 4)).astype(np.float32),
        texts=rng.standard_normal((n, 2, 5)).astype(np.float32),
        labels=labels,
        tasks=tasks,
    )


class TestBundleFormat:
    def test_empty_bundle_round_trips(self, tmp_path):
        bundle = EmbeddingBundle(
            images=np.zeros((0, 1, 4), dtype=np.float32),
            texts=np.zeros((0, 1, 4), dtype=np.float32),
            labels=np.zeros((0, 1), dtype=np.int32),
            tasks=[TaskSpec("hate", 2)],
        )
        path = tmp_path / "empty.deb"
        write_bundle(bundle, path)
        loaded = read_bundle(path)
        assert loaded.n_samples == 0
        assert loaded.tasks == [TaskSpec("hate", 2)]

    def test_handcrafted_fields_survive(self, tmp_path):
        bundle = tiny_bundle(tasks=[TaskSpec("hate", 2), TaskSpec("stance", 3)])
        path = tmp_path / "b.deb"
        write_bundle(bundle, path)
        loaded = read_bundle(path)
        assert np.array_equal(loaded.images, bundle.images)
        assert np.array_equal(loaded.texts, bundle.texts)
        assert np.array_equal(loaded.labels, bundle.labels)
        assert [t.name for t in loaded.tasks] == ["hate", "stance"]
        assert loaded.n_img_tokens == 1 and loaded.n_txt_tokens == 2

    def test_large_bundle_byte_identical_round_trip(self, tmp_path):
        bundle = synth_generate(1000, PRIDEMM_TASKS["stance"], pridemm_priors("stance"), d_img=16, d_txt=16, noise_seed=1)
        first = tmp_path / "a.deb"
        second = tmp_path / "b.deb"
        write_bundle(bundle, first)
        write_bundle(read_bundle(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_bad_magic_diagnostic(self, tmp_path):
        path = tmp_path / "bad.deb"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(DataFormatError, match="magic"):
            read_bundle(path)

    def test_truncation_diagnostic(self, tmp_path):
        bundle = tiny_bundle()
        path = tmp_path / "b.deb"
        write_bundle(bundle, path)
        clipped = tmp_path / "c.deb"
        clipped.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DataFormatError, match="truncated"):
            read_bundle(clipped)

    def test_out_of_range_label_diagnostic(self, tmp_path):
        bundle = tiny_bundle()
        path = tmp_path / "b.deb"
        write_bundle(bundle, path)
        raw = bytearray(path.read_bytes())
        raw[-4:] = np.int32(7).tobytes()
        broken = tmp_path / "broken.deb"
        broken.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="out of range"):
            read_bundle(broken)

    def test_trailing_bytes_diagnostic(self, tmp_path):
        bundle = tiny_bundle()
        path = tmp_path / "b.deb"
        write_bundle(bundle, path)
        padded = tmp_path / "p.deb"
        padded.write_bytes(path.read_bytes() + b"!")
        with pytest.raises(DataFormatError, match="trailing"):
            read_bundle(padded)

    def test_non_finite_embeddings_rejected(self):
        with pytest.raises(DataFormatError, match="finite"):
            EmbeddingBundle(
                images=np.full((1, 1, 2), np.nan, dtype=np.float32),
                texts=np.zeros((1, 1, 2), dtype=np.float32),
                labels=np.zeros((1, 1), dtype=np.int32),
                tasks=[TaskSpec("hate", 2)],
            )

    def test_missing_labels_allowed(self):
        bundle = EmbeddingBundle(
            images=np.zeros((2, 1, 2), dtype=np.float32),
            texts=np.zeros((2, 1, 2), dtype=np.float32),
            labels=np.array([[0], [-1]], dtype=np.int32),
            tasks=[TaskSpec("hate", 2)],
        )
        assert bundle.labeled_indices("hate").tolist() == [0]


class TestStratifiedSplit:
    def test_exactly_divisible_binary_split(self):
        labels = np.array([0] * 50 + [1] * 50)
        bundle = EmbeddingBundle(
            images=np.zeros((100, 1, 2), dtype=np.float32),
            texts=np.zeros((100, 1, 2), dtype=np.float32),
            labels=labels[:, None],
            tasks=[TaskSpec("hate", 2)],
        )
        plan = stratified_split(bundle, "hate", (0.9, 0.1), seed=0)
        val_labels = labels[plan.val]
        assert plan.val.size == 10
        assert int(np.sum(val_labels == 0)) == 5
        assert int(np.sum(val_labels == 1)) == 5

    def test_single_class_rejected(self):
        bundle = EmbeddingBundle(
            images=np.zeros((10, 1, 2), dtype=np.float32),
            texts=np.zeros((10, 1, 2), dtype=np.float32),
            labels=np.zeros((10, 1), dtype=np.int32),
            tasks=[TaskSpec("hate", 2)],
        )
        with pytest.raises(ConfigurationError, match="classes"):
            stratified_split(bundle, "hate", (0.9, 0.1), seed=0)

    def test_pridemm_hate_counts_preserve_proportions_within_one(self):
        counts = PRIDEMM_LABEL_COUNTS["hate"]
        labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
        n = labels.size
        bundle = EmbeddingBundle(
            images=np.zeros((n, 1, 2), dtype=np.float32),
            texts=np.zeros((n, 1, 2), dtype=np.float32),
            labels=labels[:, None].astype(np.int32),
            tasks=[TaskSpec("hate", 2)],
        )
        plan = stratified_split(bundle, "hate", (0.9, 0.1), seed=3)
        for part, frac in ((plan.train, 0.9), (plan.val, 0.1)):
            for c, total in enumerate(counts):
                got = int(np.sum(labels[part] == c))
                assert abs(got - frac * total) <= 1.0

    def test_disjoint_and_covering(self):
        bundle = tiny_bundle(n=57, seed=5)
        plan = stratified_split(bundle, 0, (0.8, 0.2), seed=9)
        combined = np.concatenate([plan.train, plan.val])
        assert np.unique(combined).size == combined.size
        assert set(combined.tolist()) == set(bundle.labeled_indices(0).tolist())

    def test_deterministic_per_seed(self):
        bundle = tiny_bundle(n=80, seed=6)
        a = stratified_split(bundle, 0, (0.9, 0.1), seed=4)
        b = stratified_split(bundle, 0, (0.9, 0.1), seed=4)
        c = stratified_split(bundle, 0, (0.9, 0.1), seed=5)
        assert np.array_equal(a.train, b.train) and np.array_equal(a.val, b.val)
        assert not np.array_equal(a.val, c.val)

    def test_three_way_split(self):
        bundle = tiny_bundle(n=90, seed=7)
        plan = stratified_split(bundle, 0, (0.7, 0.15, 0.15), seed=1)
        assert plan.train.size + plan.val.size + plan.test.size == 90

    def test_fractions_must_sum_to_one(self):
        bundle = tiny_bundle(n=20, seed=8)
        with pytest.raises(ConfigurationError, match="sum to 1"):
            stratified_split(bundle, 0, (0.9, 0.2), seed=0)

    def test_class_smaller_than_parts_rejected(self):
        labels = np.array([0, 0, 0, 0, 1])[:, None].astype(np.int32)
        bundle = EmbeddingBundle(
            images=np.zeros((5, 1, 2), dtype=np.float32),
            texts=np.zeros((5, 1, 2), dtype=np.float32),
            labels=labels,
            tasks=[TaskSpec("hate", 2)],
        )
        with pytest.raises(ConfigurationError, match="fewer"):
            stratified_split(bundle, 0, (0.4, 0.3, 0.3), seed=0)

    def test_missing_labels_excluded(self):
        labels = np.array([0, 1, -1, 0, 1, -1, 0, 1])[:, None].astype(np.int32)
        bundle = EmbeddingBundle(
            images=np.zeros((8, 1, 2), dtype=np.float32),
            texts=np.zeros((8, 1, 2), dtype=np.float32),
            labels=labels,
            tasks=[TaskSpec("hate", 2)],
        )
        plan = stratified_split(bundle, 0, (0.5, 0.5), seed=0)
        combined = set(plan.train.tolist()) | set(plan.val.tolist())
        assert combined == {0, 1, 3, 4, 6, 7}


class TestSynthGenerator:
    def test_table_priors_within_two_percent(self):
        bundle = synth_generate(2000, PRIDEMM_TASKS["hate"], pridemm_priors("hate"), d_img=8, d_txt=8, noise_seed=0)
        frac = np.bincount(bundle.labels[:, 0], minlength=2) / 2000
        assert abs(frac[0] - 0.4923) <= 0.02 or abs(frac[0] - 0.5077) <= 0.02

    def test_humor_default_priors(self):
        priors = pridemm_priors("humor")
        assert priors[0] == pytest.approx(0.3172, abs=5e-4)
        assert priors[1] == pytest.approx(0.6828, abs=5e-4)

    def test_chi_square_not_rejected(self):
        for task in PRIDEMM_TASKS:
            priors = pridemm_priors(task)
            bundle = synth_generate(1500, PRIDEMM_TASKS[task], priors, d_img=4, d_txt=4, noise_seed=2)
            observed = np.bincount(bundle.labels[:, 0], minlength=priors.size)
            expected = priors * 1500
            stat = float(np.sum((observed - expected) ** 2 / expected))
            assert stat < chi2.ppf(0.99, df=priors.size - 1)

    def test_high_separation_linear_probe_auroc(self):
        bundle = synth_generate(2000, PRIDEMM_TASKS["hate"], pridemm_priors("hate"),
                                d_img=16, d_txt=16, separation=5.0, noise_seed=3)
        X = np.concatenate([bundle.images[:, 0, :], bundle.texts[:, 0, :]], axis=1)
        y = bundle.labels[:, 0]
        probe = LogisticRegression(max_iter=1000).fit(X[:1000], y[:1000])
        scores = probe.predict_proba(X[1000:])[:, 1]
        assert auroc_binary(scores, y[1000:]) >= 0.99

    def test_zero_separation_carries_no_signal(self):
        bundle = synth_generate(2000, PRIDEMM_TASKS["hate"], pridemm_priors("hate"),
                                d_img=16, d_txt=16, separation=0.0, noise_seed=4)
        X = np.concatenate([bundle.images[:, 0, :], bundle.texts[:, 0, :]], axis=1)
        y = bundle.labels[:, 0]
        probe = LogisticRegression(max_iter=1000).fit(X[:1000], y[:1000])
        scores = probe.predict_proba(X[1000:])[:, 1]
        assert 0.45 <= auroc_binary(scores, y[1000:]) <= 0.55

    def test_deterministic_per_seed(self):
        a = synth_generate(100, PRIDEMM_TASKS["stance"], pridemm_priors("stance"), d_img=8, d_txt=8, noise_seed=9)
        b = synth_generate(100, PRIDEMM_TASKS["stance"], pridemm_priors("stance"), d_img=8, d_txt=8, noise_seed=9)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.texts, b.texts)
        assert np.array_equal(a.labels, b.labels)

    def test_bad_priors_rejected(self):
        with pytest.raises(ConfigurationError, match="sum to 1"):
            synth_generate(10, PRIDEMM_TASKS["hate"], [0.6, 0.6], d_img=4, d_txt=4)

    def test_prior_count_mismatch_rejected(self):
        with pytest.raises(ConfigurationError, match="priors"):
            synth_generate(10, PRIDEMM_TASKS["stance"], [0.5, 0.5], d_img=4, d_txt=4)
