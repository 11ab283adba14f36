import numpy as np
import pytest

from timgen.providers import (
    EmbeddingParseError,
    ModalityKind,
    TableProvider,
    file_provider,
    mock_provider,
    write_table,
)

DIMS = {"text": 4, "img": 3, "video": 2, "audio": 5}


def test_mock_is_deterministic_and_sized():
    p = mock_provider(7, DIMS)
    a, b = p.get("item-1", ModalityKind.TEXT), p.get("item-1", "text")
    assert np.array_equal(a, b)
    assert a.shape == (4,)
    assert p.get("item-1", "audio").shape == (5,)
    assert np.array_equal(a, mock_provider(7, DIMS).get("item-1", "text"))


def test_mock_distinguishes_items():
    p = mock_provider(0, DIMS)
    vecs = {tuple(p.get(f"i{k}", "img")) for k in range(1000)}
    assert len(vecs) == 1000


def test_table_lookup(tmp_path):
    path = tmp_path / "emb.tsv"
    write_table(path, [("a", "text", np.array([0.5, -1.0, 2.0, 0.25]))])
    p = file_provider(path, DIMS)
    assert p.get("a", "text").tolist() == [0.5, -1.0, 2.0, 0.25]
    assert p.get("a", "img") is None
    assert p.get("b", "text") is None
    assert p.items() == ["a"]


@pytest.mark.parametrize("line,fragment", [
    ("a\ttext\t1,2,3", "dimension"),
    ("a\tsmell\t1,2,3,4", "unknown modality"),
    ("a\ttext\t1,2,x,4", "bad float"),
    ("a\ttext", "3 tab-separated"),
    ("a\ttext\t1,2,nan,4", "non-finite"),
])
def test_parse_errors_carry_line_number(tmp_path, line, fragment):
    path = tmp_path / "bad.tsv"
    path.write_text("ok\ttext\t0,0,0,1\n" + line + "\n")
    with pytest.raises(EmbeddingParseError) as info:
        file_provider(path, DIMS)
    assert ":2" in str(info.value)
    assert fragment in str(info.value)


def test_duplicate_rows_rejected(tmp_path):
    path = tmp_path / "dup.tsv"
    path.write_text("a\tvideo\t1,2\na\tvideo\t3,4\n")
    with pytest.raises(EmbeddingParseError):
        file_provider(path)


def test_table_provider_direct():
    p = TableProvider({("x", "audio"): np.ones(5)}, DIMS)
    assert p.get("x", ModalityKind.AUDIO).sum() == 5
