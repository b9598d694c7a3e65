import numpy as np
import pytest

from nites import patchio


def noisy_checkerboard(side=256, cell=8, noise=0.05, seed=1):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:side, :side]
    cb = ((yy // cell + xx // cell) % 2).astype(float)
    img = np.stack([0.2 + 0.6 * cb, 0.7 - 0.4 * cb, 0.5 + 0.2 * cb], axis=-1)
    return np.clip(img + rng.normal(0, noise, img.shape), 0, 1)


def brick_wall(side=256, brick_h=16, brick_w=32, mortar=2, seed=3):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:side, :side]
    row = yy // brick_h
    shifted = xx + (row % 2) * (brick_w // 2)
    is_mortar = (yy % brick_h < mortar) | (shifted % brick_w < mortar)
    brick_id = row * 97 + shifted // brick_w
    tint = np.random.default_rng(seed + 1).uniform(-0.08, 0.08, brick_id.max() + 1)[brick_id]
    red = np.stack([0.62 + tint, 0.28 + tint / 2, 0.2 + tint / 3], axis=-1)
    grey = np.array([0.78, 0.76, 0.72])
    img = np.where(is_mortar[..., None], grey, red)
    return np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)


@pytest.fixture(scope="session")
def checkerboard():
    return noisy_checkerboard()


@pytest.fixture(scope="session")
def bricks():
    return brick_wall()


@pytest.fixture(scope="session")
def checkerboard_png(tmp_path_factory, checkerboard):
    path = tmp_path_factory.mktemp("exemplar") / "checker.png"
    patchio.save_image(checkerboard, path)
    return path


@pytest.fixture(scope="session")
def standard_model(checkerboard):
    from nites import synth
    from nites.config import RunConfig

    return synth.fit(checkerboard, RunConfig())


@pytest.fixture(scope="session")
def small_config():
    from nites.config import RunConfig

    return RunConfig.preset("b", num_crops=800, clusters=2, cdf_bins=32, vq_codebook=8)


@pytest.fixture(scope="session")
def small_model(checkerboard, small_config):
    from nites import synth

    return synth.fit(checkerboard, small_config)


# acceptance lines, echoed once more in the terminal summary so they survive output capture
ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    def report(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
