import os
import sys
import tempfile

# Log to a scratch file, never into the source tree
os.environ.setdefault("DDR_LOG_FILE", os.path.join(tempfile.gettempdir(), "ddreason-tests.log"))

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "ddreason"))

import pytest

from config import CONFIG
from rpn import DatasetSpec, write_dataset

CONFIG.PROGRESS_BAR = False


TINY_SPEC = DatasetSpec(n=3, counts=(96, 24, 24, 12), seed=7, gen_n=6)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Small dataset directory: n=3 train/val/test, n=6 generalization split."""
    out = tmp_path_factory.mktemp("tiny_data")
    write_dataset(TINY_SPEC, str(out))
    return str(out)


@pytest.fixture
def run_dir(tmp_path):
    return str(tmp_path / "run")
