"""
Test suite for the BSDE stability lab.
"""

import pytest
import tempfile
from pathlib import Path

import numpy as np


@pytest.fixture
def rng():
    """Seeded generator for tests that draw random instances."""
    return np.random.default_rng(12345)


@pytest.fixture
def temp_output_dir():
    """Create a temporary directory for output files."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)
