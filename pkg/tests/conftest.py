import importlib
import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def import_required(module_name: str):
    """
    Import a project module with a clearer failure message than ModuleNotFoundError.
    Missing modules should fail loudly rather than skip.
    """
    try:
        return importlib.import_module(module_name)
    except ModuleNotFoundError as e:
        pytest.fail(
            f"Required module '{module_name}.py' not found. "
            f"See interfaces.md for the module contract. "
            f"Original error: {e}"
        )


@pytest.fixture
def db_module():
    return import_required("db")


@pytest.fixture
def config_module():
    return import_required("config")


@pytest.fixture
def cli_module():
    return import_required("main")


@pytest.fixture
def ledger(tmp_path, db_module):
    """SQLite run ledger at tmp_path / runs.db via open_ledger."""
    fn = getattr(db_module, "open_ledger", None)
    if not callable(fn):
        pytest.fail("db module must provide open_ledger(path). See interfaces.md.")
    ledger = fn(tmp_path / "runs.db")
    yield ledger
    ledger.close()


@pytest.fixture
def golden_lines():
    """Parsed rng golden fixture: list of (tag, tokens)."""
    rows = []
    for line in (FIXTURES / "rng_golden.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        tag, *tokens = line.split()
        rows.append((tag, tokens))
    return rows


def _law(family, role="loss", **params):
    distributions = import_required("distributions")
    cls = {
        "negpareto": distributions.NegPareto,
        "normal": distributions.Normal,
        "nig": distributions.NIG,
        "stable": distributions.Stable,
        "degenerate": distributions.Degenerate,
    }[family]
    return distributions.StepLaw(cls(**params), distributions.Role(role))


@pytest.fixture
def make_law():
    """Factory: make_law("normal", "loss", mu=1.0, sigma2=1.0) -> StepLaw."""
    return _law


@pytest.fixture
def normal_scheme():
    """n -> RescaledScheme with N(1, 1) losses and N(-0.05, 0.09) log-returns."""
    rescale = import_required("rescale")

    def build(n, loss=(1.0, 1.0), ret=(-0.05, 0.09)):
        return rescale.RescaledScheme(
            n,
            _law("normal", "loss", mu=loss[0], sigma2=loss[1]),
            _law("normal", "logreturn", mu=ret[0], sigma2=ret[1]),
        )

    return build


@pytest.fixture
def write_config(tmp_path):
    """Write a dict as JSON config and return its path."""

    def write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path

    return write
