import numpy as np
import pytest

from atomgs.plyio import PlyError, read_ply, write_ply


def test_binary_round_trip(tmp_path):
    props = {"x": np.array([0.0, 1.5, -2.0], np.float32), "red": np.array([0, 128, 255], np.uint8),
             "w": np.array([1.0, 2.0, 3.0])}
    write_ply(tmp_path / "a.ply", props)
    back = read_ply(tmp_path / "a.ply")
    assert list(back) == ["x", "red", "w"]
    for k in props:
        assert back[k].dtype == props[k].dtype
        np.testing.assert_array_equal(back[k], props[k])


def test_ascii_round_trip(tmp_path):
    props = {"x": np.array([0.25, -1.0]), "y": np.array([3, 4], np.int32)}
    write_ply(tmp_path / "a.ply", props, binary=False)
    back = read_ply(tmp_path / "a.ply")
    np.testing.assert_array_equal(back["x"], props["x"])
    np.testing.assert_array_equal(back["y"], props["y"])


def test_empty_element(tmp_path):
    write_ply(tmp_path / "e.ply", {"x": np.zeros(0, np.float32)})
    assert len(read_ply(tmp_path / "e.ply")["x"]) == 0


def test_reads_second_element_after_binary_first(tmp_path):
    path = tmp_path / "two.ply"
    header = ("ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty float f\n"
              "element vertex 2\nproperty double x\nend_header\n").encode()
    body = np.array([7.0], "<f4").tobytes() + np.array([1.0, 2.0], "<f8").tobytes()
    path.write_bytes(header + body)
    np.testing.assert_array_equal(read_ply(path)["x"], [1.0, 2.0])


@pytest.mark.parametrize("text, fragment", [
    ("plx\n", "magic"),
    ("ply\nformat binary_big_endian 1.0\nend_header\n", "unsupported format"),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty list uchar int idx\nend_header\n", "list"),
    ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n", "end of data"),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1 2\n", "expected 1 values"),
    ("ply\nformat ascii 1.0\nproperty float x\nend_header\n", "before any element"),
])
def test_malformed_headers_name_the_problem(tmp_path, text, fragment):
    path = tmp_path / "bad.ply"
    path.write_text(text)
    with pytest.raises(PlyError, match=fragment):
        read_ply(path)


def test_error_reports_line_number(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\nbogus line\nend_header\n")
    with pytest.raises(PlyError, match="line 4"):
        read_ply(path)


def test_truncated_binary(tmp_path):
    path = tmp_path / "t.ply"
    path.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nend_header\n"
                     + np.zeros(2, "<f4").tobytes())
    with pytest.raises(PlyError, match="expected 3 rows"):
        read_ply(path)
