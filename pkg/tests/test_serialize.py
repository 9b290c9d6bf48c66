import json

import numpy as np
import pytest

from artifact import serialize
from artifact.errors import FormatVersionMismatchError, MissingInputError, ShapeMismatchError


class TestSerialize:
    def test_roundtrip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"w": rng.standard_normal((3, 4)), "i": np.arange(5), "s": np.array(0.1 + 0.2)}
        p = tmp_path / "m.json"
        serialize.save(p, "vae", {"beta": 0.5}, arrays)
        meta, back = serialize.load(p, "vae")
        assert meta == {"beta": 0.5}
        for k, v in arrays.items():
            assert back[k].shape == v.shape
            np.testing.assert_array_equal(back[k], v)
        assert back["i"].dtype == np.int64

    def test_wrong_kind(self, tmp_path):
        p = tmp_path / "m.json"
        serialize.save(p, "forest", {}, {})
        with pytest.raises(FormatVersionMismatchError):
            serialize.load(p, "vae")

    def test_future_version_rejected(self):
        doc = json.loads(serialize.dumps("vae", {}, {}))
        doc["format_version"] = serialize.FORMAT_VERSION + 1
        with pytest.raises(FormatVersionMismatchError):
            serialize.loads(json.dumps(doc))

    def test_foreign_file_rejected(self):
        with pytest.raises(FormatVersionMismatchError):
            serialize.loads('{"hello": 1}')

    def test_declared_shape_checked(self):
        with pytest.raises(ShapeMismatchError):
            serialize.decode_array({"shape": [2, 2], "dtype": "float", "data": [1.0, 2.0, 3.0]})

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            serialize.load(tmp_path / "absent.json")
