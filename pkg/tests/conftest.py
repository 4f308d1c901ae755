"""
Shared fixtures: small phantom specs and configs, and a small generated cohort.
"""
import os
import sys

import numpy as np
import pytest

# Make the repository root importable so `src.*` resolves
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.config.run_config import RunConfig
from src.phantom.generator import generate_cohort, sample_case_spec

# Small phantom family: fast to render, still resolvable at 1.5 mm
SMALL_DIMS = (32, 40, 40)
SMALL_SPACING_MM = (5.0, 4.0, 4.0)


@pytest.fixture
def rng():
    """Seeded generator for randomized property tests."""
    return np.random.default_rng(20240611)


@pytest.fixture
def small_spec():
    """A negative small-family phantom."""
    return sample_case_spec("case_neg", 0, seed=3, dims=SMALL_DIMS, spacing_mm=SMALL_SPACING_MM)


@pytest.fixture
def small_positive_spec():
    """A positive small-family phantom with one nodule."""
    return sample_case_spec("case_pos", 1, seed=3, dims=SMALL_DIMS, spacing_mm=SMALL_SPACING_MM)


@pytest.fixture
def fast_config():
    """Coarse grid and crop so batch tests stay quick."""
    return RunConfig(target_spacing_mm=(3.0, 3.0, 3.0), crop_size=(48, 48, 48))


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """Ten-case small-family cohort written once per session."""
    out = tmp_path_factory.mktemp("cohort")
    cases = generate_cohort(out, n=10, positive_frac=0.34, seed=7,
                            dims=SMALL_DIMS, spacing_mm=SMALL_SPACING_MM)
    return out, cases
