import json
import struct

import numpy as np
import pytest

from polylm.align import EmbeddingSpace
from polylm.autograd import ShapeError
from polylm.model import extract_embeddings
from polylm.serialization import (
    Checkpoint,
    FormatError,
    TruncatedError,
    VersionError,
    export_embeddings,
    import_embeddings,
    load_checkpoint,
    save_checkpoint,
)

from builders import arrays, make_params


def rewrite_meta(path, edit):
    raw = open(path, "rb").read()
    (n,) = struct.unpack_from("<Q", raw)
    meta = json.loads(raw[8 : 8 + n])
    edit(meta)
    blob = json.dumps(meta).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)) + blob + raw[8 + n :])


@pytest.fixture
def saved(tmp_path):
    params = make_params(dtype="float32", seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint(params, epoch=4, seed=11, extra={"validation": 0.25}), path)
    return params, path


class TestCheckpoint:
    def test_round_trip_bit_exact(self, saved):
        params, path = saved
        back = load_checkpoint(path)
        want, got = arrays(params), arrays(back.params)
        assert list(want) == list(got)
        for name in want:
            assert got[name].dtype == np.float32
            assert got[name].tobytes() == want[name].tobytes(), name
        assert back.epoch == 4 and back.seed == 11 and back.extra == {"validation": 0.25}
        assert back.params.config == params.config
        assert back.params.vocabs == params.vocabs

    def test_save_load_save_identical_bytes(self, saved, tmp_path):
        _, path = saved
        again = tmp_path / "again.ckpt"
        save_checkpoint(load_checkpoint(path), again)
        assert again.read_bytes() == path.read_bytes()

    def test_dtype_override(self, saved):
        _, path = saved
        back = load_checkpoint(path, dtype="float64")
        assert back.params.config.dtype == "float64"
        assert all(t.data.dtype == np.float64 for t in back.params.parameters())

    def test_no_tmp_left_behind(self, saved):
        _, path = saved
        assert [p.name for p in path.parent.iterdir()] == ["m.ckpt"]

    @pytest.mark.parametrize("keep", [0, 5, 20, -1])
    def test_truncated(self, saved, keep):
        _, path = saved
        raw = path.read_bytes()
        path.write_bytes(raw[:keep] if keep >= 0 else raw[:-3])
        with pytest.raises(TruncatedError):
            load_checkpoint(path)

    def test_trailing_bytes(self, saved):
        _, path = saved
        path.write_bytes(path.read_bytes() + b"\0\0\0\0")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(path)

    def test_version_mismatch(self, saved):
        _, path = saved
        rewrite_meta(path, lambda m: m.update(format_version=2))
        with pytest.raises(VersionError):
            load_checkpoint(path)

    def test_shape_mismatch(self, saved):
        _, path = saved

        def transpose_emb(meta):
            for t in meta["tensors"]:
                if t["name"] == "emb.a":
                    t["shape"] = t["shape"][::-1]

        rewrite_meta(path, transpose_emb)
        with pytest.raises(ShapeError, match="emb.a"):
            load_checkpoint(path)

    def test_garbage_metadata(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(struct.pack("<Q", 4) + b"\xff\xfe{]")
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestEmbeddingText:
    def test_round_trip(self, tmp_path):
        params = make_params(d=5, sizes=(8, 6), seed=2)
        space = extract_embeddings(params, "a")
        path = tmp_path / "a.txt"
        export_embeddings(space, path)
        back = import_embeddings(path, "a")
        assert back.tokens == space.tokens
        assert np.max(np.abs(back.matrix - space.matrix)) <= 1e-6

    def test_header(self, tmp_path):
        space = EmbeddingSpace("x", ["u", "v"], np.array([[1.0, 2.0], [3.0, -4.5]]))
        export_embeddings(space, tmp_path / "e.txt")
        assert (tmp_path / "e.txt").read_text().splitlines()[0] == "2 2"

    def test_whitespace_token_rejected(self, tmp_path):
        space = EmbeddingSpace("x", ["a b", "c"], np.eye(2))
        with pytest.raises(FormatError, match="whitespace"):
            export_embeddings(space, tmp_path / "e.txt")

    @pytest.mark.parametrize(
        "text, where",
        [
            ("2\nx 1 2\n", ":1:"),
            ("2 2\nx 1 2\ny 1\n", ":3:"),
            ("2 2\nx 1 2\nx 3 4\n", ":3:"),
            ("1 2\nx 1 oops\n", ":2:"),
            ("3 2\nx 1 2\ny 3 4\n", "declares 3"),
            ("1 2\nx 1 2\ny 3 4\n", ":3:"),
        ],
    )
    def test_malformed(self, tmp_path, text, where):
        path = tmp_path / "e.txt"
        path.write_text(text)
        with pytest.raises(FormatError, match=where):
            import_embeddings(path)
