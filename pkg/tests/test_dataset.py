import numpy as np
import pytest

from csifm.channel import ArrayGeometry, CarrierConfig, ScenarioConfig
from csifm.dataset import (
    CsiDataset,
    generate_scenario,
    read_dataset,
    read_manifest,
    write_dataset,
)
from csifm.errors import ConfigError, FormatError

LO = CarrierConfig(3.5e9, 5e6, 8, 4)
HI = CarrierConfig(28e9, 5e6, 8, 16)


def small(seed=0, n=12, scenario=0, first=0):
    return generate_scenario(ScenarioConfig(scenario, max_paths=6), n, LO, HI,
                             ArrayGeometry.ula(4, LO.wavelength), ArrayGeometry.ula(16, HI.wavelength),
                             8, (1, 8, 16), seed, first)


def test_roundtrip(tmp_path):
    ds = small()
    write_dataset(ds, tmp_path / "d.bin", {"split": "train"})
    back = read_dataset(tmp_path / "d.bin")
    for k in ("h", "gains", "delays", "valid", "los", "position", "best_beam", "sample_id"):
        np.testing.assert_array_equal(getattr(back, k), getattr(ds, k))
    assert back.codebook_sizes == (1, 8, 16)
    m = read_manifest(tmp_path / "d.json")
    assert m["n_samples"] == 12 and m["split"] == "train" and m["scenario_ids"] == [0]


def test_same_seed_same_bytes(tmp_path):
    write_dataset(small(), tmp_path / "a.bin", {})
    write_dataset(small(), tmp_path / "b.bin", {})
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_samples_independent_of_batch_position():
    whole = small(n=10)
    tail = small(n=4, first=6)
    np.testing.assert_array_equal(whole.h[6:], tail.h)


def test_different_seed_differs():
    assert not np.array_equal(small(0).h, small(1).h)


def test_bad_magic_and_version(tmp_path):
    p = tmp_path / "d.bin"
    write_dataset(small(n=2), p, {})
    raw = bytearray(p.read_bytes())
    (tmp_path / "x.bin").write_bytes(b"NOTADATA" + raw[8:])
    with pytest.raises(FormatError):
        read_dataset(tmp_path / "x.bin")
    raw[8] = 99
    (tmp_path / "y.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_dataset(tmp_path / "y.bin")


def test_padding_and_params():
    ds = small()
    for i in range(len(ds)):
        p = ds.params(i)
        assert p.n_paths == ds.valid[i].sum()
        assert np.all(ds.delays[i, ~ds.valid[i]] == 0)


def test_beam_label_lookup():
    ds = small()
    assert np.all(ds.beam_labels(1) == 0)
    assert ds.beam_labels(16).max() < 16
    with pytest.raises(ConfigError):
        ds.beam_labels(32)


def test_slot_budget_enforced():
    with pytest.raises(ConfigError):
        generate_scenario(ScenarioConfig(0, max_paths=10), 1, LO, HI,
                          ArrayGeometry.ula(4, LO.wavelength), ArrayGeometry.ula(16, HI.wavelength),
                          8, (1,), 0)


def test_concatenate_and_subset():
    a, b = small(scenario=0), small(scenario=1)
    both = CsiDataset.concatenate([a, b])
    assert len(both) == 24
    assert set(both.subset(np.arange(12, 24)).scenario_id) == {1}
