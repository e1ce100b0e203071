import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

PROBLEMS_DIR = Path(__file__).resolve().parent.parent / "problems"


@pytest.fixture
def problems_dir():
    return PROBLEMS_DIR


@pytest.fixture
def write_config(tmp_path):
    """Write a problem document to a temp file and return its path."""

    def _write(doc, name="problem.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)

    return _write


@pytest.fixture
def base_hu_doc():
    """An editable copy of the linear constant-envelope problem."""
    return json.loads((PROBLEMS_DIR / "hu_linear.json").read_text())
