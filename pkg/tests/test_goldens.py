import json

import pytest

from otfdh import goldens
from otfdh.errors import ParameterError
from otfdh.wire import MsgType


def test_shipped_vectors_cover_every_type():
    vectors = goldens.load_vectors(goldens.default_path())
    assert [v["name"] for v in vectors] == [m.name for m in MsgType]
    assert goldens.verify_vectors(goldens.default_path()) == []


def test_regeneration_is_reproducible():
    shipped = goldens.load_vectors(goldens.default_path())
    assert goldens.generate_vectors() == shipped


@pytest.mark.parametrize("text", ["", "   \n", "{not json", "[]", '{"format": "other", "vectors": [1]}',
                                  '{"format": "otfdh-wire-goldens", "vectors": []}'])
def test_bad_files(tmp_path, text):
    path = tmp_path / "g.json"
    path.write_text(text)
    with pytest.raises(ParameterError):
        goldens.verify_vectors(path)


def test_broken_entry_is_named(tmp_path):
    doc = json.loads(goldens.default_path().read_text())
    del doc["vectors"][2]["fields"]
    doc["vectors"][5]["fields"].append("zz")
    path = tmp_path / "g.json"
    path.write_text(json.dumps(doc))
    assert goldens.verify_vectors(path) == ["PUBKEY_REQUEST", "DH_RESPONSE"]
