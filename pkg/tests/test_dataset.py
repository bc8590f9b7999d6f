import numpy as np
import pytest

from opflearn.cases import build_case, case_hash
from opflearn.dataset import (
    Dataset,
    LoadNormalizer,
    SamplerConfig,
    build_dataset,
    generation_from_factors,
    label_loads,
    load_dataset,
    normalize,
    sample_loads,
    save_dataset,
    load_dataset_npz,
    save_dataset_npz,
    scaling_factors,
)


def test_degenerate_range_returns_defaults(triangle):
    cfg = SamplerConfig(n_samples=5, range_low=1.0, range_high=1.0, seed=3)
    loads = sample_loads(triangle, cfg)
    for row in loads:
        np.testing.assert_allclose(row, triangle.default_loads_mw(), atol=0)


def test_uniform_band_statistics():
    case = build_case(
        100.0,
        buses=[(1, 0.0), (2, 100.0)],
        branches=[(1, 2, 0.1, 500.0)],
        generators=[(1, 0.0, 400.0, (0.01, 30.0, 0.0))],
        slack_bus_id=1,
    )
    loads = sample_loads(case, SamplerConfig(n_samples=10_000, seed=11))
    col = loads[:, 1]
    assert col.min() >= 90.0 and col.max() <= 110.0
    assert abs(col.mean() - 100.0) <= 1.0  # within 1% of the uniform mean


def test_zero_default_load_stays_zero(triangle):
    loads = sample_loads(triangle, SamplerConfig(n_samples=100, seed=5))
    assert np.all(loads[:, 0] == 0.0)


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_samples=10, range_low=1.2, range_high=1.1)
    with pytest.raises(ValueError):
        SamplerConfig(n_samples=-1)
    assert SamplerConfig(n_samples=0).n_samples == 0  # header-only datasets are legal


def test_scaling_factor_inversion():
    case = build_case(
        100.0,
        buses=[(1, 0.0), (2, 30.0)],
        branches=[(1, 2, 0.1, 200.0)],
        generators=[
            (1, 0.0, 100.0, (0.01, 30.0, 0.0)),
            (2, 10.0, 50.0, (0.01, 30.0, 0.0)),
        ],
        slack_bus_id=1,
    )
    assert scaling_factors(case, np.array([70.0, 30.0]))[0] == pytest.approx(0.5)
    assert scaling_factors(case, np.array([70.0, 10.0]))[0] == pytest.approx(0.0)
    assert scaling_factors(case, np.array([70.0, 50.0]))[0] == pytest.approx(1.0)


def test_degenerate_generator_range_gets_alpha_zero():
    case = build_case(
        100.0,
        buses=[(1, 0.0), (2, 30.0)],
        branches=[(1, 2, 0.1, 200.0)],
        generators=[
            (1, 0.0, 100.0, (0.01, 30.0, 0.0)),
            (2, 25.0, 25.0, (0.01, 30.0, 0.0)),
        ],
        slack_bus_id=1,
    )
    assert scaling_factors(case, np.array([5.0, 25.0]))[0] == 0.0


def test_label_round_trips_through_scaling(triangle, triangle_cont, rng):
    loads = sample_loads(triangle, SamplerConfig(n_samples=1, seed=int(rng.integers(1e6))))
    samples, dropped = label_loads(triangle, triangle_cont, loads)
    assert dropped == 0
    s = samples[0]
    rebuilt = generation_from_factors(triangle, s.alpha, s.p_d)
    slack = triangle.slack_gen_index
    for g in triangle.generators:
        if g.index != slack:
            assert rebuilt[g.index] == pytest.approx(s.p_g[g.index], abs=1e-9)
    assert np.sum(s.p_g) == pytest.approx(np.sum(s.p_d), abs=1e-6 * 100)


def test_labels_satisfy_dataset_invariants(triangle, triangle_cont):
    ds = build_dataset(triangle, triangle_cont, SamplerConfig(n_samples=30, seed=2))
    alphas = ds.alphas()
    assert np.all(alphas >= 0.0) and np.all(alphas <= 1.0)
    slack = triangle.slack_gen_index
    others = [g.index for g in triangle.generators if g.index != slack]
    for s in ds.samples:
        slack_reconstructed = np.sum(s.p_d) - np.sum(s.p_g[others])
        assert slack_reconstructed == pytest.approx(s.p_g[slack], abs=1e-6 * 100)


def test_infeasible_loads_dropped_with_count(triangle, triangle_cont, caplog):
    good = np.array([0.0, 60.0, 40.0])
    bad = np.array([0.0, 500.0, 500.0])  # beyond total generation capacity
    with caplog.at_level("WARNING"):
        samples, dropped = label_loads(triangle, triangle_cont, np.vstack([good, bad]))
    assert len(samples) == 1 and dropped == 1
    assert any("dropping sample" in r.message for r in caplog.records)


def test_normalizer_two_point_and_constant():
    norm = LoadNormalizer().fit(np.array([[90.0, 7.0], [110.0, 7.0]]))
    np.testing.assert_allclose(norm.mean_, [100.0, 7.0])
    np.testing.assert_allclose(norm.std_, [10.0, 1.0])  # population std; constant -> 1
    out = norm.transform(np.array([[90.0, 7.0], [110.0, 7.0]]))
    np.testing.assert_allclose(out[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(out[:, 1], [0.0, 0.0])


def test_normalizer_round_trip(rng):
    x = rng.uniform(0, 50, size=(40, 6))
    norm = LoadNormalizer().fit(x)
    np.testing.assert_allclose(norm.inverse_transform(norm.transform(x)), x, atol=1e-12)


def test_normalize_uses_training_split_only(triangle, triangle_cont):
    ds = build_dataset(triangle, triangle_cont, SamplerConfig(n_samples=22, seed=9))
    assert ds.n_train == 20
    expected = LoadNormalizer().fit(ds.loads("train"))
    np.testing.assert_allclose(ds.norm_mean, expected.mean_)
    np.testing.assert_allclose(ds.norm_std, expected.std_)
    transformed = (ds.loads("train") - ds.norm_mean) / ds.norm_std
    keep = ds.loads("train").std(axis=0) > 1e-9  # skip the constant zero-load coordinate
    assert np.max(np.abs(transformed.mean(axis=0)[keep])) < 1e-12
    np.testing.assert_allclose(transformed.std(axis=0)[keep], 1.0, atol=1e-12)


def test_normalize_empty_train_split_raises(triangle):
    ds = Dataset(case_hash="x", sampler=SamplerConfig(n_samples=0), samples=[], n_train=0)
    with pytest.raises(ValueError):
        normalize(ds)


def test_serialization_round_trip_is_bit_exact(tmp_path, triangle, triangle_cont):
    ds = build_dataset(triangle, triangle_cont, SamplerConfig(n_samples=12, seed=4))
    path1 = tmp_path / "a.jsonl"
    path2 = tmp_path / "b.jsonl"
    save_dataset(ds, str(path1))
    again = load_dataset(str(path1))
    save_dataset(again, str(path2))
    assert path1.read_bytes() == path2.read_bytes()
    assert again.case_hash == case_hash(triangle)
    assert again.n_train == ds.n_train
    np.testing.assert_array_equal(again.loads(), ds.loads())
    np.testing.assert_array_equal(again.alphas(), ds.alphas())


def test_same_seed_same_bytes(tmp_path, triangle, triangle_cont):
    paths = []
    for name in ("r1.jsonl", "r2.jsonl"):
        ds = build_dataset(triangle, triangle_cont, SamplerConfig(n_samples=8, seed=77))
        p = tmp_path / name
        save_dataset(ds, str(p))
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    ds_other = build_dataset(triangle, triangle_cont, SamplerConfig(n_samples=8, seed=78))
    other = tmp_path / "r3.jsonl"
    save_dataset(ds_other, str(other))
    assert other.read_bytes() != paths[0].read_bytes()


def test_npz_blob_round_trip(tmp_path, triangle, triangle_cont):
    ds = build_dataset(triangle, triangle_cont, SamplerConfig(n_samples=6, seed=1))
    path = tmp_path / "ds.npz"
    save_dataset_npz(ds, str(path))
    again = load_dataset_npz(str(path))
    np.testing.assert_array_equal(again.loads(), ds.loads())
    np.testing.assert_array_equal(again.generations(), ds.generations())
    assert again.n_train == ds.n_train
