import struct

import numpy as np
import pytest

from dice.artifact import (
    FORMAT_VERSION,
    CorruptArtifactError,
    VersionMismatchError,
    load_model,
    read_header,
    save_model,
)
from dice.trainer import DiceHyper, DimensionMismatchError, predict, train_dice
from conftest import make_subject


@pytest.fixture(scope="module")
def model(small_split):
    return train_dice(small_split, 3, 4, DiceHyper(n_iter=4))


@pytest.fixture
def saved(model, tmp_path):
    path = tmp_path / "model.bin"
    save_model(model, path)
    return path


def test_round_trip_is_bit_exact(model, saved, small_split):
    loaded = load_model(saved)
    subjects = small_split.test.subjects[:10]
    a, b = predict(model, subjects), predict(loaded, subjects)
    for field in ("z", "soft", "hard", "prob"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert loaded.eligible == model.eligible
    assert np.array_equal(loaded.significance.p_values, model.significance.p_values, equal_nan=True)
    assert list(loaded.risk_ranks()) == list(model.risk_ranks())
    assert read_header(saved)["K"] == 3


def test_resave_identical(model, saved, tmp_path):
    again = tmp_path / "again.bin"
    save_model(load_model(saved), again)
    assert again.read_bytes() == saved.read_bytes()


@pytest.mark.parametrize("cut", [4, 30, -1, -200])
def test_truncated_file_is_corrupt(saved, cut):
    raw = saved.read_bytes()
    saved.write_bytes(raw[:cut])
    with pytest.raises(CorruptArtifactError, match="corrupt artifact"):
        load_model(saved)


def test_flipped_byte_is_corrupt(saved):
    raw = bytearray(saved.read_bytes())
    raw[-9] ^= 0xFF
    saved.write_bytes(bytes(raw))
    with pytest.raises(CorruptArtifactError, match="checksum"):
        load_model(saved)


def test_bad_magic(saved):
    raw = saved.read_bytes()
    saved.write_bytes(b"NOTAMODL" + raw[8:])
    with pytest.raises(CorruptArtifactError, match="magic"):
        load_model(saved)


def test_version_mismatch(saved):
    raw = bytearray(saved.read_bytes())
    struct.pack_into("<I", raw, 8, FORMAT_VERSION + 1)
    saved.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        load_model(saved)


def test_feature_dimension_mismatch(saved, small_split):
    loaded = load_model(saved)
    width = len(loaded.feature_names)
    n_conf = len(loaded.confounder_names)
    wide = make_subject("x", np.zeros((3, width + 1)), confounders=np.zeros(n_conf))
    with pytest.raises(DimensionMismatchError):
        predict(loaded, [wide])
    ok = make_subject("y", np.zeros((3, width)), confounders=np.zeros(n_conf + 1))
    with pytest.raises(DimensionMismatchError):
        predict(loaded, [ok])
