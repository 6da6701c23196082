"""
Unit tests for network and optimiser checkpoints.
"""
import json

import numpy as np
import pytest

from src.common.exceptions import DatasetError
from src.data.checkpoints import HEADER, Checkpoint, load_checkpoint, save_checkpoint
from src.data.pdtf import write_tensor
from src.nets import CFEModel, NetSpec, OPModelBank
from src.optimize.adam import AdamState

SMALL = {"levels": 1, "base_features": 2, "feature_cap": 4}


@pytest.fixture
def checkpoint():
    bank = OPModelBank.create(4, NetSpec(2, 1, rank=1, **SMALL), seed=3, nonnegative=True)
    cfe = CFEModel.create("burger", seed=5, **SMALL)
    keys = ["op2/stem.w", "cfe/head.b"]
    adam = AdamState(
        lr=0.01,
        step=7,
        m={k: np.full(2, 0.5) for k in keys},
        v={k: np.full(2, 0.25) for k in keys},
    )
    return Checkpoint(bank=bank, cfe=cfe, adam=adam, meta={"epoch": 3, "experiment": "burger"})


def _same_params(a, b):
    assert set(a) == set(b)
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


class TestCheckpoints:
    """Saving and restoring networks with their optimiser state"""

    def test_round_trip(self, tmp_path, checkpoint):
        """Test banks, CFE, ADAM moments and metadata survive a save/load"""
        save_checkpoint(tmp_path / "ckpt", checkpoint)
        restored = load_checkpoint(tmp_path / "ckpt")

        assert list(restored.bank) == [2, 4]
        assert restored.bank.nonnegative
        for n in (2, 4):
            assert restored.bank[n][0] == checkpoint.bank[n][0]
            _same_params(restored.bank[n][1], checkpoint.bank[n][1])
        assert restored.cfe.mode == "burger"
        assert restored.cfe.spec == checkpoint.cfe.spec
        _same_params(restored.cfe.params, checkpoint.cfe.params)

        assert restored.adam.step == 7
        assert restored.adam.lr == 0.01
        assert sorted(restored.adam.m) == ["cfe/head.b", "op2/stem.w"]
        np.testing.assert_array_equal(restored.adam.v["op2/stem.w"], [0.25, 0.25])
        assert restored.meta == {"epoch": 3, "experiment": "burger"}

    def test_file_layout(self, tmp_path, checkpoint):
        """Test parameter keys map to files with '/' replaced"""
        save_checkpoint(tmp_path, checkpoint)
        assert (tmp_path / "params" / "op2__stem.w.pdtf").exists()
        assert (tmp_path / "adam" / "m" / "cfe__head.b.pdtf").exists()
        header = json.loads((tmp_path / HEADER).read_text())
        assert header["version"] == 1
        assert all(len(f["sha256"]) == 64 for f in header["files"])

    def test_partial_checkpoint(self, tmp_path):
        """Test a checkpoint with only a CFE and no optimiser"""
        cfe = CFEModel.create("burger", **SMALL)
        save_checkpoint(tmp_path, Checkpoint(cfe=cfe))
        restored = load_checkpoint(tmp_path)
        assert restored.bank is None
        assert restored.adam is None
        _same_params(restored.cfe.params, cfe.params)

    def test_missing_header(self, tmp_path):
        """Test a directory without a header raises DatasetError"""
        with pytest.raises(DatasetError):
            load_checkpoint(tmp_path)

    def test_corrupted_header(self, tmp_path):
        """Test an unparseable header raises DatasetError"""
        (tmp_path / HEADER).write_text("{")
        with pytest.raises(DatasetError):
            load_checkpoint(tmp_path)

    def test_checksum_mismatch(self, tmp_path, checkpoint):
        """Test a modified parameter file is detected"""
        save_checkpoint(tmp_path, checkpoint)
        path = tmp_path / "params" / "op2__stem.w.pdtf"
        original = checkpoint.bank[2][1]["stem.w"]
        write_tensor(path, np.zeros_like(original))
        with pytest.raises(DatasetError):
            load_checkpoint(tmp_path)
        restored = load_checkpoint(tmp_path, verify=False)
        assert np.all(restored.bank[2][1]["stem.w"] == 0.0)
