import numpy as np

from shapeprint import report


def test_ascii_heatmap_shading():
    text = report.ascii_heatmap(np.array([[0.0, 1.0]]), ["a"])
    assert text == "a |" + "  " + "@@" + "|\n"


def test_pgm_header_and_values():
    data = report.pgm_bytes(np.array([[0.0, 1.0]]), cell=2)
    header, pixels = data[:11], data[11:]
    assert header == b"P5\n4 2\n255\n"
    assert list(pixels) == [255, 255, 0, 0] * 2


def test_csv_writers(tmp_path):
    report.write_rows_csv(tmp_path / "r.csv", [{"a": 1, "b": 0.5}, {"a": 2, "c": "x"}])
    assert (tmp_path / "r.csv").read_text().splitlines() == ["a,b,c", "1,0.500000,", "2,,x"]
    report.write_matrix_csv(tmp_path / "m.csv", [[0, 1], [1, 0]], ["p", "q"], ["p", "q"])
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "p,0.000000,1.000000"
    paths = report.write_heatmap(tmp_path / "h", [[0, 1], [1, 0]], ["p", "q"])
    assert [p.suffix for p in paths] == [".txt", ".pgm"]
