"""Synthetic cohort generator."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from dropout_transfer import data
from dropout_transfer.errors import ConfigurationError
from dropout_transfer.evaluation import pad_features, proxy_a_distance
from dropout_transfer.synth import (Archetype, GeneratorConfig, ShiftConfig, default_correlation,
                                    generate_cohort, generator_config_from_dict,
                                    read_ground_truth, write_ground_truth)
from oracles import scan_dropout_weeks

VOCAB = data.EventVocabulary.default()
VIDEO = {n for n, v in zip(VOCAB.names, VOCAB.video) if v}


def event_log(cohort):
    c = cohort.counts
    return [(cohort.student_ids[i], k + 1, cohort.vocabulary.names[e], int(c[i, k, e]))
            for i, k, e in zip(*np.nonzero(c))]


class TestGenerator:
    def test_zero_hazard_never_drops_out(self):
        cohort = generate_cohort(GeneratorConfig(n_students=200, dropout_hazard=(0.0,) * 9, seed=1))
        assert not cohort.labels.any()
        assert (cohort.dropout_week == 10).all()

    def test_same_seed_identical(self):
        a = generate_cohort(GeneratorConfig(n_students=100, seed=9))
        b = generate_cohort(GeneratorConfig(n_students=100, seed=9))
        assert_array_equal(a.counts, b.counts)
        assert_array_equal(a.dropout_week, b.dropout_week)
        c = generate_cohort(GeneratorConfig(n_students=100, seed=10))
        assert not np.array_equal(a.counts, c.counts)

    def test_labels_recover_generator_dropout(self):
        cohort = generate_cohort(GeneratorConfig(n_students=1000, seed=2))
        assert_array_equal(cohort.dropout_week, cohort.generator_dropout_week)
        truth = scan_dropout_weeks(event_log(cohort), VIDEO, 9)
        assert all(truth[s] == w for s, w in zip(cohort.student_ids, cohort.generator_dropout_week))

    def test_no_video_after_dropout(self):
        cohort = generate_cohort(GeneratorConfig(n_students=500, seed=3))
        weeks = np.arange(1, 10)
        after = weeks[None, :] >= cohort.dropout_week[:, None]
        video = cohort.counts[:, :, VOCAB.video_indices].sum(axis=2)
        assert not video[after].any()

    def test_ground_truth_csv(self, tmp_path):
        cohort = generate_cohort(GeneratorConfig(n_students=50, seed=4))
        write_ground_truth(tmp_path / "t.csv", cohort)
        truth = read_ground_truth(tmp_path / "t.csv")
        assert [truth[s] for s in cohort.student_ids] == cohort.generator_dropout_week.tolist()

    def test_correlated_types_have_correlated_counts(self):
        corr = default_correlation(VOCAB)
        a, b = VOCAB.index("play_video"), VOCAB.index("pause_video")
        corr[a, b] = corr[b, a] = 0.95
        cohort = generate_cohort(GeneratorConfig(n_students=2000, correlation=corr, seed=5))
        week1 = cohort.counts[:, 0]
        assert np.corrcoef(week1[:, a], week1[:, b])[0, 1] >= 0.6


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"n_students": 0},
        {"dropout_hazard": (0.1,) * 8},
        {"dropout_hazard": (1.5,) + (0.1,) * 8},
        {"correlation": np.full((13, 13), 2.0)},
        {"shift": ShiftConfig(correlation_perturbation=1.5)},
        {"shift": ShiftConfig(frequency_scale=(-1.0,) * 13)},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(**kw).resolved()

    def test_not_psd(self):
        corr = np.eye(13)
        corr[0, 1] = corr[1, 0] = corr[0, 2] = corr[2, 0] = 0.9
        corr[1, 2] = corr[2, 1] = -0.9
        with pytest.raises(ConfigurationError, match="PSD"):
            generate_cohort(GeneratorConfig(n_students=5, correlation=corr))

    def test_from_dict(self):
        cfg = generator_config_from_dict({
            "n_students": 30, "seed": 2, "loading": {"play_video": 1.5},
            "archetypes": [{"name": "a"}, {"name": "b", "engagement_offset": 0.5}],
            "shift": {"frequency_scale": {"seq_goto": 3}, "cohort_mixture_weights": [1, 3]},
        })
        assert cfg.loading[0] == 1.5 and cfg.loading[1] == 0.5
        assert cfg.shift.frequency_scale[VOCAB.index("seq_goto")] == 3.0
        assert [a.name for a in cfg.archetypes] == ["a", "b"]
        assert generate_cohort(cfg).n_students == 30

    def test_archetype_loading(self):
        cfg = generator_config_from_dict({
            "n_students": 3000, "seed": 6, "loading": {"seq_goto": 0.8},
            "archetypes": [{"name": "a"}, {"name": "b", "loading": {"seq_goto": -0.8}}],
        })
        a, b = cfg.archetypes
        g = VOCAB.index("seq_goto")
        assert a.loading is None and b.loading[g] == -0.8
        # unspecified types fall back to the cohort loading
        assert b.loading[VOCAB.index("play_video")] == cfg.loading[VOCAB.index("play_video")]
        cohort = generate_cohort(cfg)
        first = np.log1p(cohort.counts[:, 0])
        video = first[:, VOCAB.video_indices].sum(axis=1)
        for name, sign in (("a", 1), ("b", -1)):
            rows = cohort.demographics == name
            assert sign * np.corrcoef(video[rows], first[rows, g])[0, 1] > 0.1

    def test_archetype_loading_shape(self):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(archetypes=(Archetype("a", loading=(0.5,) * 3),)).resolved()

    @pytest.mark.parametrize("d", [{"n_student": 3}, {"loading": {"nope": 1}},
                                   {"archetypes": [{"name": "a", "size": 3}]},
                                   {"shift": {"scale": 2}}])
    def test_from_dict_rejects_unknown(self, d):
        with pytest.raises(ConfigurationError):
            generator_config_from_dict(d)


class TestShift:
    def test_identical_configs_are_close(self):
        a = generate_cohort(GeneratorConfig(seed=31))
        b = generate_cohort(GeneratorConfig(seed=32))
        assert proxy_a_distance(pad_features(a), pad_features(b)).pad <= 0.3

    def test_frequency_scale_raises_pad(self):
        means = []
        for scale in (1.0, 0.7, 0.4):
            pads = []
            for seed in range(5):
                a = generate_cohort(GeneratorConfig(n_students=800, seed=100 + seed))
                b = generate_cohort(GeneratorConfig(n_students=800, seed=200 + seed,
                                                    shift=ShiftConfig(frequency_scale=(scale,) * 13)))
                pads.append(proxy_a_distance(pad_features(a), pad_features(b)).pad)
            means.append(np.mean(pads))
        assert means[0] < means[1] < means[2]
