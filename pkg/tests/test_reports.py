import json

import pandas as pd
import pytest

from pricelab.reports import (
    SCHEMA_VERSION,
    SchemaVersionError,
    read_csv,
    read_json,
    write_csv,
    write_json,
)


def test_csv_files_carry_their_version(tmp_path):
    path = tmp_path / "reports" / "table.csv"
    frame = pd.DataFrame({"step": [0, 1], "gain": [0.25, -0.125]})
    write_csv(frame, path)

    lines = path.read_text().split("\n")
    assert lines[0] == f"# schema_version: {SCHEMA_VERSION}"
    assert lines[1] == "step,gain"
    assert lines[2] == "0,0.25"
    assert "\r" not in path.read_text()
    pd.testing.assert_frame_equal(read_csv(path), frame)


def test_csv_with_other_major_is_rejected(tmp_path):
    path = tmp_path / "table.csv"
    path.write_text("# schema_version: 2.0\nstep\n0\n")
    with pytest.raises(SchemaVersionError):
        read_csv(path)

    path.write_text("step\n0\n")
    with pytest.raises(SchemaVersionError):
        read_csv(path)

    path.write_text("# schema_version: 1.3\nstep\n0\n")
    assert read_csv(path)["step"].tolist() == [0]


def test_json_files_carry_their_version(tmp_path):
    path = tmp_path / "summary.json"
    write_json({"sessions": 3}, path)
    assert json.loads(path.read_text()) == {"schema_version": SCHEMA_VERSION, "sessions": 3}
    assert read_json(path)["sessions"] == 3

    path.write_text(json.dumps({"schema_version": "0.9"}))
    with pytest.raises(SchemaVersionError):
        read_json(path)
