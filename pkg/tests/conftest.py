import numpy as np
import pytest
import skimage.data
from skimage.color import rgb2gray

from gsrdenoise.gmm import TrainingConfig, sample_training_groups, train_em
from gsrdenoise.grouping import PatchSpec

# filled by the acceptance suite, printed at the end of the session
ACCEPTANCE_LINES = []

TRAIN_NAMES = ("camera", "coins", "chelsea", "moon")
# (name, row slice, col slice): 128x128 crops of images disjoint from the training set
TEST_CROPS = (
    ("astronaut", slice(0, 128), slice(180, 308)),
    ("coffee", slice(100, 228), slice(200, 328)),
    ("clock", slice(50, 178), slice(100, 228)),
)


def natural(name):
    img = getattr(skimage.data, name)()
    if img.ndim == 3:
        img = rgb2gray(img) * 255.0
    return np.asarray(img, dtype=np.float64)


@pytest.fixture(scope="session")
def train_corpus():
    return [natural(n) for n in TRAIN_NAMES]


@pytest.fixture(scope="session")
def test_crops():
    return [(name, natural(name)[rows, cols]) for name, rows, cols in TEST_CROPS]


@pytest.fixture(scope="session")
def small_spec():
    return PatchSpec(d=4, m=16, window=20)


@pytest.fixture(scope="session")
def small_model(train_corpus, small_spec):
    """Quick K=4, 4x4-patch prior for functional tests."""
    cfg = TrainingConfig(n_groups=600, spec=small_spec, max_em_iters=20, seed=3)
    return train_em(sample_training_groups(train_corpus, cfg), 4, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
