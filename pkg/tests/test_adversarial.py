import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfdistill import features as ft
from rfdistill.adversarial import (
    GROUP_BY_ID,
    GROUPS,
    MEMBER_SLOTS,
    STEP_BY_ID,
    STEPS,
    AdversarialDataset,
    alter_sample,
    create_dataset,
    generate_all,
)
from rfdistill.flows import FAMILIES

from .conftest import random_vectors


def base():
    v = np.zeros(ft.N_FEATURES)
    v[[ft.DURATION, ft.OUT_BYTES, ft.IN_BYTES, ft.TOT_PKTS]] = 1, 10, 10, 2
    v[[0, 1, 2, 3]] = 0, 1, 1025, 80
    return ft.recompute_derived(v)


def test_tables():
    assert len(GROUPS) == 15 and len(STEPS) == 9
    assert len({g.members for g in GROUPS}) == 15
    assert [s.id for s in STEPS] == ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX"]
    assert GROUP_BY_ID["3c"].members == ("duration", "dst_bytes", "tot_pkts")
    vi = STEP_BY_ID["VI"]
    assert (vi.duration, vi.src_bytes, vi.dst_bytes, vi.tot_pkts) == (30, 128, 128, 20)
    ix = STEP_BY_ID["IX"]
    assert (ix.duration, ix.src_bytes, ix.dst_bytes, ix.tot_pkts) == (120, 1024, 1024, 100)


def test_duration_step_one():
    out = alter_sample(base(), GROUP_BY_ID["1a"], STEP_BY_ID["I"])
    assert out[ft.DURATION] == 2
    assert out[ft.BYTES_PER_SEC] == 10 and out[ft.PKTS_PER_SEC] == 1
    assert out[ft.BYTES_PER_PKT] == 10 and out[ft.TOT_BYTES] == 20 and out[ft.RATIO] == 1


def test_src_bytes_step_six():
    before = base()
    out = alter_sample(before, GROUP_BY_ID["1b"], STEP_BY_ID["VI"])
    assert out[ft.OUT_BYTES] == before[ft.OUT_BYTES] + 128
    assert out[ft.TOT_BYTES] == 148 and out[ft.RATIO] == 13.8
    assert out[ft.BYTES_PER_SEC] == 148 and out[ft.BYTES_PER_PKT] == 74


def test_three_member_group_step_two():
    out = alter_sample(base(), GROUP_BY_ID["3c"], STEP_BY_ID["II"])
    assert (out[ft.DURATION], out[ft.IN_BYTES], out[ft.TOT_PKTS], out[ft.OUT_BYTES]) == (3, 12, 4, 10)
    assert out[ft.TOT_BYTES] == 22
    assert out[ft.PKTS_PER_SEC] == pytest.approx(4 / 3, rel=1e-15)


def test_input_not_modified():
    v = base()
    alter_sample(v, GROUP_BY_ID["4a"], STEP_BY_ID["IX"])
    assert np.array_equal(v, base())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(GROUPS), st.sampled_from(STEPS))
def test_alteration_exactness(seed, g, s):
    X = random_vectors(np.random.default_rng(seed), 20)
    out = alter_sample(X, g, s)
    altered = {MEMBER_SLOTS[m] for m in g.members}
    for m in g.members:
        assert np.array_equal(out[:, MEMBER_SLOTS[m]], X[:, MEMBER_SLOTS[m]] + s.amount(m))
    assert np.array_equal(ft.recompute_derived(out), out)
    untouched = [i for i in range(ft.N_FEATURES) if i not in altered and i not in ft.DEPENDENT]
    assert out[:, untouched].tobytes() == X[:, untouched].tobytes()


def test_unaffected_derived_slots_kept():
    # a duration bump leaves byte totals and the byte ratio untouched
    X = random_vectors(np.random.default_rng(0), 30)
    out = alter_sample(X, GROUP_BY_ID["1a"], STEP_BY_ID["V"])
    for slot in (ft.TOT_BYTES, ft.BYTES_PER_PKT, ft.RATIO):
        assert out[:, slot].tobytes() == X[:, slot].tobytes()


def test_full_grid_counts():
    rng = np.random.default_rng(0)
    sets = {f: random_vectors(rng, 10) for f in FAMILIES}
    ds = generate_all(sets)
    assert len(ds) == 810
    assert len({d.key for d in ds}) == 810
    for f in FAMILIES:
        assert sum(d.family == f for d in ds) == 135
    assert all(len(d.samples) == 10 for d in ds)


def test_restricted_grid():
    sets = {"Neris": random_vectors(np.random.default_rng(1), 4)}
    ds = generate_all(sets, [GROUP_BY_ID["1a"]], [STEP_BY_ID["I"], STEP_BY_ID["IX"]])
    assert [d.key for d in ds] == [("Neris", "1a", "I"), ("Neris", "1a", "IX")]


def test_empty_family_rejected():
    with pytest.raises(ValueError):
        create_dataset(np.zeros((0, ft.N_FEATURES)), GROUPS[0], STEPS[0], "Neris")


def test_dataset_roundtrip(tmp_path):
    X = random_vectors(np.random.default_rng(2), 12)
    d = create_dataset(X, GROUP_BY_ID["2e"], STEP_BY_ID["VIII"], "NSIS.ay")
    path = d.save(tmp_path)
    assert path.name == "NSIS_ay__2e__VIII.csv"
    back = AdversarialDataset.load(path)
    assert back.key == d.key
    assert np.array_equal(back.samples, d.samples)
    assert np.array_equal(back.provenance, np.arange(12))
    assert back.metadata()["increments"] == {"src_bytes": 512, "dst_bytes": 512}
