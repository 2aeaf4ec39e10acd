import pytest

from lrnn.data import generate_planted_dataset
from lrnn.structure import SearchConfig, structure_learn

PLANTED_SEED = 0


@pytest.fixture(scope="session")
def planted():
    return generate_planted_dataset(PLANTED_SEED, 200)


@pytest.fixture(scope="session")
def planted_run(planted):
    """One default structure-learning run on the planted set, with per-iteration snapshots."""
    from lrnn.data import serialize_template

    records, snapshots = [], []

    def snap(it, template, store):
        snapshots.append((it, template.copy(), store.copy(), template.check_stratified(), len(template)))

    template, store = structure_learn(planted, SearchConfig(), snap, records)
    return {"template": template, "store": store, "records": records, "snapshots": snapshots,
            "text": serialize_template(template, store)}


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
