import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

from embdispatch.core import ClusterConfig  # noqa: E402
from embdispatch.workload import WorkloadSpec, gen_zipf  # noqa: E402

HETERO = (5e9,) * 4 + (5e8,) * 4


def default_cluster(total_embeddings=50_000, **kw):
    kw.setdefault("cache_ratio", 0.08)
    return ClusterConfig.build(8, 128, HETERO, total_embeddings=total_embeddings, **kw)


@pytest.fixture(scope="session")
def default_run_inputs():
    """The default heterogeneous config and its 200-iteration Zipf stream."""
    spec = WorkloadSpec()
    cfg = default_cluster(spec.total_embeddings)
    return spec, cfg, list(gen_zipf(spec, cfg))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
