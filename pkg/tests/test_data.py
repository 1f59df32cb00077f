import numpy as np
import pytest
from scipy.stats import chisquare

from cflab.core.errors import ConfigError, DataFormatError, EmptyDatasetError, SamplingError, StatisticError
from cflab.data.dataset import build_dataset, ingest, kcore_filter, load_dataset, save_dataset, split
from cflab.data.sampler import Batch, InBatchSampler, UniformSampler, get_sampler, sample_negatives
from cflab.data.statistics import compare_to_reference, dataset_stats, gini_index, suggest_gamma_ratio
from cflab.data.synthetic import generate_synthetic, parse_synthetic_spec

from conftest import write_tsv


def test_ingest_skips_comments_and_compacts_ids(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("# header\n\n100\t7\t5\n200\t9\n100\t9\t3\n", encoding="utf-8")
    ds = ingest(path)

    assert ds.num_users == 2 and ds.num_items == 2
    assert list(ds.user_ids) == [100, 200]
    assert list(ds.item_ids) == [7, 9]
    assert ds.pairs("train")[0].tolist() == [0, 1, 0]
    assert ds.timestamps.tolist() == [5, 0, 3]


def test_ingest_reports_bad_line_number(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("1\t2\n# fine\n3\tx\n", encoding="utf-8")
    with pytest.raises(DataFormatError) as info:
        ingest(path)
    assert info.value.line == 3


def test_ingest_reports_invalid_utf8_with_line_number(tmp_path):
    path = tmp_path / "latin.tsv"
    path.write_bytes(b"1\t2\t3\n\xff\xfe\t4\t5\n")
    with pytest.raises(DataFormatError) as info:
        ingest(path)
    assert info.value.line == 2
    assert "UTF-8" in str(info.value)


def test_ingest_rejects_wrong_field_count_and_negative_ids(tmp_path):
    with pytest.raises(DataFormatError):
        ingest(write_tsv(tmp_path / "a.tsv", [(1, 2, 3, 4)]))
    with pytest.raises(DataFormatError):
        ingest(write_tsv(tmp_path / "b.tsv", [(1, -2)]))


def test_ingest_empty_and_missing_files(tmp_path):
    empty = tmp_path / "empty.tsv"
    empty.write_text("# nothing here\n", encoding="utf-8")
    with pytest.raises(EmptyDatasetError):
        ingest(empty)
    with pytest.raises(FileNotFoundError):
        ingest(tmp_path / "missing.tsv")


def test_duplicates_keep_latest_timestamp():
    ds = build_dataset([1, 1, 1], [5, 5, 5], [10, 30, 20])
    assert len(ds) == 1
    assert ds.timestamps.tolist() == [30]


def test_kcore_reaches_fixed_point():
    # user 2 only touches item 30; peeling it leaves a 2x2 block.
    ds = build_dataset([0, 0, 1, 1, 2], [10, 20, 10, 20, 30])
    core = kcore_filter(ds, 2)

    assert len(core) == 4
    assert core.num_users == 2 and core.num_items == 2
    assert set(core.item_ids.tolist()) == {10, 20}
    assert np.bincount(core.users).min() >= 2
    assert np.bincount(core.items).min() >= 2


def test_kcore_cascades_to_empty():
    ds = build_dataset([0, 0, 1], [0, 1, 1])
    core = kcore_filter(ds, 2)
    assert len(core) == 0
    with pytest.raises(ConfigError):
        kcore_filter(ds, 0)


def test_split_is_chronological_per_user():
    users = [0] * 10 + [1] * 2
    items = list(range(10)) + [0, 1]
    stamps = list(range(10, 0, -1)) + [1, 2]
    ds = split(build_dataset(users, items, stamps), (7, 1, 2), seed=3)

    codes = dict(zip(zip(ds.users.tolist(), ds.timestamps.tolist()), ds.split))
    user0 = sorted((t, codes[(0, t)]) for t in range(1, 11))
    assert [label for _, label in user0] == ["train"] * 7 + ["valid"] + ["test"] * 2
    # Fewer than three interactions stay in train.
    assert codes[(1, 1)] == "train" and codes[(1, 2)] == "train"


def test_split_keeps_a_train_interaction_for_three_item_users():
    ds = split(build_dataset([0, 0, 0], [1, 2, 3], [1, 2, 3]), (7, 1, 2), seed=0)
    assert sorted(ds.split) == ["test", "train", "valid"]


def test_split_rejects_bad_ratio():
    ds = build_dataset([0, 0, 0], [1, 2, 3])
    with pytest.raises(ConfigError):
        split(ds, (0, 0, 0))


def test_dataset_artifact_round_trip(tmp_path, small_dataset):
    path = save_dataset(small_dataset, tmp_path / "dataset.npz")
    loaded = load_dataset(path)
    assert loaded.is_split
    assert loaded.num_users == small_dataset.num_users
    assert np.array_equal(loaded.split_codes, small_dataset.split_codes)
    assert np.array_equal(loaded.item_ids, small_dataset.item_ids)


def test_gini_reference_values():
    assert gini_index([0, 0, 0, 10]) == 0.75
    assert gini_index([4, 4, 4, 4]) == 0.0
    counts = np.array([1, 5, 2, 9, 0, 3])
    assert abs(gini_index(counts) - gini_index(7.5 * counts)) <= 1e-12


def test_gini_undefined_inputs():
    with pytest.raises(StatisticError):
        gini_index([0, 0, 0])
    with pytest.raises(StatisticError):
        gini_index([])


def test_dataset_stats_keys():
    ds = build_dataset([0, 0, 0, 1, 1, 2], [0, 1, 2, 0, 1, 0])
    stats = dataset_stats(ds)
    assert stats["num_interactions"] == 6
    assert stats["density"] == pytest.approx(6 / 9)
    assert stats["gini_user"] == pytest.approx(4 / 18)
    assert stats["gini_ratio"] == pytest.approx(1.0)
    assert suggest_gamma_ratio(stats) == stats["gini_ratio"]


def test_compare_to_reference_band():
    near = compare_to_reference({"gini_ratio": 2.0}, "Beauty")
    assert near["reference"] == 2.096
    assert near["within_band"]
    assert not compare_to_reference({"gini_ratio": 2.0}, "gowalla")["within_band"]
    assert compare_to_reference({"gini_ratio": 2.0}, "movielens") is None
    assert compare_to_reference({"gini_ratio": None}, "beauty") is None


def test_interactions_follow_first_appearance_ids():
    ds = build_dataset([5, 5], [8, 7], [2, 1])
    assert [(x.user, x.item, x.timestamp) for x in ds.interactions] == [(0, 0, 2), (0, 1, 1)]


def test_uniform_sampler_never_returns_the_positive():
    sampler = UniformSampler(5, np.random.default_rng(0))
    batch = sampler.sample(np.arange(200) % 3, np.arange(200) % 5, 7)
    assert batch.negatives.shape == (200, 7)
    assert batch.neg_mask.all()
    assert not np.any(batch.negatives == batch.pos_items[:, None])
    assert batch.negatives.min() >= 0 and batch.negatives.max() < 5


def test_uniform_sampler_is_uniform_over_the_other_items():
    sampler = UniformSampler(10, np.random.default_rng(3))
    batch = sampler.sample(np.zeros(400, dtype=np.int64), np.full(400, 3), 50)
    counts = np.bincount(batch.negatives.ravel(), minlength=10)
    assert counts[3] == 0
    others = np.delete(counts, 3)
    assert others.sum() == 20000
    assert chisquare(others).pvalue > 1e-3


def test_uniform_sampler_errors():
    with pytest.raises(SamplingError):
        UniformSampler(1, np.random.default_rng(0))
    with pytest.raises(SamplingError):
        UniformSampler(4, np.random.default_rng(0)).sample([0], [1], 0)
    with pytest.raises(ConfigError):
        get_sampler("popularity", 10, np.random.default_rng(0))


def test_in_batch_negatives_mask_collisions():
    batch = InBatchSampler(10).sample([0, 1, 2], [4, 4, 7])
    assert batch.in_batch
    assert batch.negatives_of(0) == [7]
    assert batch.negatives_of(1) == [7]
    assert batch.negatives_of(2) == [4, 4]


def test_sample_negatives_is_seeded(small_dataset):
    pairs = [(0, 1), (2, 3)]
    a = sample_negatives(small_dataset, pairs, 4, seed=11)
    b = sample_negatives(small_dataset, pairs, 4, seed=11)
    assert np.array_equal(a.negatives, b.negatives)


def test_batch_from_lists_pads_ragged_negatives():
    batch = Batch.from_lists([(0, 1), (1, 2)], [[3], [4, 5]])
    assert batch.negatives_of(0) == [3]
    assert batch.negatives_of(1) == [4, 5]
    assert batch.num_negatives == 2


def test_synthetic_generator_is_deterministic_and_skewed():
    spec = "zipf:1.2,users=60,items=80,interactions=1500"
    a = generate_synthetic(spec, seed=4)
    b = generate_synthetic(spec, seed=4)
    assert a.frame.equals(b.frame)
    stats = dataset_stats(a)
    assert stats["gini_item"] > 0.2


def test_synthetic_spec_parsing():
    spec = parse_synthetic_spec("zipf:0.8,users=10,items=20,factors=3")
    assert (spec.exponent, spec.users, spec.items, spec.factors) == (0.8, 10, 20, 3)
    with pytest.raises(ConfigError):
        parse_synthetic_spec("gauss:1.0")
    with pytest.raises(ConfigError):
        parse_synthetic_spec("zipf:1.0,colour=3")
