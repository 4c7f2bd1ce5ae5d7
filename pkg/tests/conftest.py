import json

import pytest

TINY = {
    "carrier_lo": {"center_hz": 3.5e9, "spacing_hz": 5e6, "n_subcarriers": 8, "n_antennas": 4},
    "carrier_hi": {"center_hz": 28e9, "spacing_hz": 5e6, "n_subcarriers": 8, "n_antennas": 8},
    "splits": {"train_per_scenario": 6, "val_per_scenario": 2, "test_per_scenario": 20},
    "train": {
        "encoder": {"n_antennas": 4, "n_subcarriers": 8, "patch_len": 4, "dim": 8, "depth": 1,
                    "heads": 2, "decoder_depth": 1, "decoder_dim": 8, "decoder_heads": 2},
        "pipeline": {"patch_len": 4},
        "prior": {"slot_dim": 8, "hidden_dim": 8, "global_dim": 2, "target_dim": 8},
        "batch_size": 8, "struct_hidden": 8,
    },
    "epochs": {"param": 1, "stage1": 1, "stage2": 1},
    "downstream": {"train_ratios": [1.0], "eval_snrs_db": [10.0], "los_snrs_db": [0.0],
                   "codebook_sizes": [8], "head_epochs": 2, "head_hidden": 8, "chest_epochs": 1,
                   "chest_dim": 8, "chest_depth": 1, "seeds": [0]},
}


@pytest.fixture
def tiny_config(tmp_path):
    """Config file for a seconds-long end-to-end run inside ``tmp_path``."""
    d = dict(TINY, output_dir=str(tmp_path / "run"))
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(d))
    return path
