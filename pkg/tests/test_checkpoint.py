import pytest
import torch

from ssni.contracts.checkpoint import (
    CheckpointContract,
    load_classifier,
    load_denoiser,
    read_checkpoint,
    save_checkpoint,
)
from ssni.diffusion.nets import ResidualMLPDenoiser
from ssni.errors import CheckpointError
from ssni.harness.classifier import MLPClassifier


def test_denoiser_round_trip(tmp_path):
    torch.manual_seed(0)
    model = ResidualMLPDenoiser(2, 100, hidden=16, n_blocks=1).eval()
    path = save_checkpoint(tmp_path / "denoiser.pt", "denoiser", model, seed=7, schedule_T=100)
    loaded, header = load_denoiser(path)
    assert header["seed"] == 7 and header["schedule_T"] == 100
    assert header["arch"] == "residual_mlp"
    x = torch.randn(5, 2)
    assert torch.equal(loaded.evaluate(x, 10), model.evaluate(x, 10))


def test_classifier_round_trip_keeps_dtype(tmp_path):
    torch.manual_seed(0)
    model = MLPClassifier(2, hidden=8).double()
    torch.nn.init.normal_(model.head.weight)
    path = save_checkpoint(tmp_path / "classifier.pt", "classifier", model, seed=1)
    loaded, header = load_classifier(path)
    x = torch.rand(4, 2, dtype=torch.float64)
    assert next(loaded.parameters()).dtype == torch.float64
    assert torch.equal(loaded(x), model(x))
    assert header["input_shape"] == [2]


def test_wrong_kind(tmp_path):
    path = save_checkpoint(tmp_path / "c.pt", "classifier", MLPClassifier(2), seed=0)
    with pytest.raises(CheckpointError, match="expected a denoiser"):
        load_denoiser(path)


def test_unknown_kind(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.pt", "optimizer", MLPClassifier(2), seed=0)


def test_unsupported_version(tmp_path):
    model = MLPClassifier(2)
    header = CheckpointContract.header("classifier", model, seed=0)
    header["format_version"] = 99
    torch.save({"header": header, "state_dict": model.state_dict()}, tmp_path / "old.pt")
    with pytest.raises(CheckpointError, match="format_version"):
        read_checkpoint(tmp_path / "old.pt")


def test_missing_header_fields(tmp_path):
    torch.save({"header": {"kind": "classifier"}, "state_dict": {}}, tmp_path / "bare.pt")
    with pytest.raises(CheckpointError, match="missing fields"):
        read_checkpoint(tmp_path / "bare.pt")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        read_checkpoint(tmp_path / "absent.pt")


def test_unreadable_file(tmp_path):
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk.pt")
