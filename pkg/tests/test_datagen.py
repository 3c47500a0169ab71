import numpy as np
import pytest

from shippcc import plant
from shippcc.datagen import (
    CONDITIONS, FIELDS, Dataset, Scenario, build_dataset, compute_stats, draw_loads, make_disturbance_profile,
    make_excitation, split_and_normalize,
)
from shippcc.params import imperfect_from, load_params

TRUTH = load_params()
IMPERFECT = load_params(param_set="imperfect")


@pytest.fixture(scope="module")
def small():
    sc = Scenario(name="caseI", load_hold=20, input_hold=10, seed=3)
    return build_dataset(sc, 60, TRUTH, IMPERFECT)


# ---------------------------------------------------------------- signals

def test_profile_deterministic():
    sc = Scenario.case_i(seed=4)
    np.testing.assert_array_equal(make_disturbance_profile(sc, 5000), make_disturbance_profile(sc, 5000))


def test_condition3_profile_range():
    p = make_disturbance_profile(Scenario.single("condition3", seed=1), 50000)
    assert p.min() >= 0.10 and p.max() <= 0.30


@pytest.mark.parametrize("cond", sorted(CONDITIONS))
def test_profiles_stay_in_condition_range(cond):
    lo, hi = CONDITIONS[cond]
    p = make_disturbance_profile(Scenario.single(cond, seed=2), 20000)
    assert p.min() >= lo and p.max() <= hi


def test_load_sampler_mean():
    v = draw_loads(np.random.default_rng(0), 10_000)
    assert abs(v.mean() - 0.55) <= 0.01


def test_case_mix_follows_fractions():
    _, cond = make_disturbance_profile(Scenario.case_i(seed=0), 20000, return_conditions=True)
    for name, frac in Scenario.case_i().mix:
        assert np.mean(cond == name) == pytest.approx(frac, abs=0.05)


def test_excitation_in_box():
    u = make_excitation(20000, seed=0)
    assert np.all(u >= plant.U_LOWER) and np.all(u <= plant.U_UPPER)
    assert u[:, 0].min() >= 0.02 and u[:, 0].max() <= 0.04


def test_excitation_hold_lengths():
    u = make_excitation(1050, seed=1)
    change = np.flatnonzero(np.any(np.diff(u, axis=0) != 0, axis=1)) + 1
    edges = np.concatenate([[0], change, [len(u)]])
    runs = np.diff(edges)
    assert np.all(runs[:-1] == 200) and runs[-1] == 50


def test_excitation_seeds_differ():
    assert not np.array_equal(make_excitation(400, seed=1), make_excitation(400, seed=2))


def test_signal_lengths_validated():
    with pytest.raises(ValueError):
        make_excitation(0, seed=0)
    with pytest.raises(ValueError):
        make_disturbance_profile(Scenario(), 0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(mix=(("condition1", 0.5),))
    with pytest.raises(ValueError):
        Scenario.from_name("nowhere")


# ---------------------------------------------------------------- datasets

def test_dataset_shapes(small):
    n = 60
    assert len(small) == n
    assert small.x_e.shape == (n, plant.NX)
    assert small.x.shape == (n, plant.NX) and small.z.shape == (n, plant.NZ)
    np.testing.assert_array_equal(small.x[1:], small.x_next[:-1])
    np.testing.assert_array_equal(small.x_e, small.x_next - small.x_fp)


def test_identical_models_give_zero_labels():
    sc = Scenario(load_hold=10, input_hold=5, seed=1)
    ds = build_dataset(sc, 20, TRUTH, TRUTH)
    assert np.all(ds.x_e == 0)


def test_labels_grow_with_perturbation():
    sc = Scenario(load_hold=10, input_hold=10, seed=2)
    sizes = []
    for s in (0.25, 0.5, 1.0):
        ds = build_dataset(sc, 30, TRUTH, imperfect_from(TRUTH, s))
        sizes.append(np.linalg.norm(ds.x_e, axis=1).mean())
    assert sizes[0] < sizes[1] < sizes[2]


def test_dataset_deterministic(small):
    sc = Scenario(name="caseI", load_hold=20, input_hold=10, seed=3)
    again = build_dataset(sc, 60, TRUTH, IMPERFECT)
    for f in FIELDS:
        np.testing.assert_array_equal(getattr(small, f), getattr(again, f))


def test_normalize_round_trip(small):
    ds = split_and_normalize(small)
    x = ds.x[ds.part("test")]
    np.testing.assert_allclose(ds.stats.denormalize("x", ds.stats.normalize("x", x)), x, rtol=1e-14, atol=1e-12)


def test_training_split_standardised(small):
    ds = split_and_normalize(small)
    tr = ds.part("train")
    for f in ("x", "z", "u", "x_e"):
        a = ds.stats.normalize(f, getattr(ds, f)[tr])
        m = ds.stats.active(f)
        np.testing.assert_allclose(a[:, m].mean(axis=0), 0.0, atol=1e-8)
        np.testing.assert_allclose(a[:, m].std(axis=0), 1.0, rtol=1e-8)


def test_test_split_never_used_in_stats(small):
    ds = split_and_normalize(small)
    a, b, _ = ds.bounds[1], ds.bounds[2], ds.bounds[3]
    trimmed = small.head(b)
    st = compute_stats(trimmed, slice(0, a))
    for f in FIELDS:
        np.testing.assert_array_equal(st.mean[f], ds.stats.mean[f])
        np.testing.assert_array_equal(st.std[f], ds.stats.std[f])


def test_split_blocks_contiguous(small):
    ds = split_and_normalize(small)
    assert ds.bounds == (0, 42, 48, 60)
    assert ds.manifest["split"] == {"train": 42, "val": 6, "test": 12}


def test_denormalize_active_pins_constant_dims(small):
    ds = split_and_normalize(small)
    m = ds.stats.active("x")
    out = ds.stats.denormalize_active("x", np.full(plant.NX, 5.0))
    np.testing.assert_array_equal(out[~m], ds.stats.mean["x"][~m])


def test_save_load_round_trip(small, tmp_path):
    ds = split_and_normalize(small)
    ds.save(tmp_path / "d")
    back = Dataset.load(tmp_path / "d")
    for f in FIELDS:
        np.testing.assert_array_equal(getattr(back, f), getattr(ds, f))
    assert back.bounds == ds.bounds
    assert back.manifest["seed"] == 3
    np.testing.assert_array_equal(back.stats.std["x"], ds.stats.std["x"])


def test_load_missing_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope"):
        Dataset.load(tmp_path / "nope")
