import numpy as np
import pytest

from goldiprox.data import CorruptionConfig, DatasetBundle, corrupt_bundle, split, synth_clusters


def tiny_bundle(seed=0, label_noise=0.1, white_noise=0.1, n_per_class=40, classes=3, dim=6):
    ex = synth_clusters(classes, dim, n_per_class, 0.3, seed)
    n = len(ex)
    tr, va, te = split(ex, n // 2, n // 4, n - n // 2 - n // 4, seed)
    return corrupt_bundle(DatasetBundle(tr, va, te, classes), CorruptionConfig(label_noise, white_noise, seed))


@pytest.fixture
def bundle():
    return tiny_bundle()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])
    seen = []

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        seen.append(line)
        lines.append(line)
        print("\n" + line, flush=True)

    yield record
    if not seen:
        lines.append(f"FAIL {request.node.name}: raised before a verdict was recorded")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
