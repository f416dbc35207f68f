import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from saedetect import synthetic


@pytest.fixture(scope="session")
def reference_corpus():
    """The frozen reference corpus, generated once per test session."""
    return synthetic.reference_corpus()


@pytest.fixture(scope="session")
def small_corpus():
    """A cheap corpus for tests that train models but do not assert rates."""
    return synthetic.generate_dataset(
        synthetic.default_device_profiles(),
        60,
        synthetic.default_malicious_profiles(),
        40,
        seed=4242,
    )
