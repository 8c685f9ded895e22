import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the wirecraft helpers

from sni_sight.corpus import WebsiteUniverse


@pytest.fixture
def universe5():
    return WebsiteUniverse([f"site{i:02d}.test" for i in range(5)])


@pytest.fixture
def universe20():
    return WebsiteUniverse([f"site{i:02d}.test" for i in range(20)])
