import pytest

from cassnat.data import SynthSpec, synthesize
from cassnat.models import ModelConfig

TINY_SPEC = SynthSpec(n_train=24, n_dev=8, n_test=4, min_len=3, max_len=5, seed=11)


def tiny_config(corpus, **kw):
    base = dict(input_dim=corpus.spec.feat_dim, vocab_size=corpus.vocab.size, eos_id=corpus.vocab.eos_id,
                d_model=16, n_heads=2, d_ff=32, n_enc=2, n_sad=1, n_mad=1, n_at_dec=1, conv_kernel=3)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return synthesize(TINY_SPEC)


# -- per-criterion summary ----------------------------------------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number this test covers")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA.setdefault(m.args[0], [])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.failed or report.skipped):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            _CRITERIA.setdefault(value, []).append(report)
            return


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        reports = [r for r in _CRITERIA[n] if r.when == "call" or r.failed or r.skipped]
        if not reports:
            tr.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        ok = all(r.passed for r in reports) and any(r.when == "call" for r in reports)
        details = [v for r in reports for k, v in r.user_properties if k == "detail"]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  " + "; ".join(details))
