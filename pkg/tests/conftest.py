from __future__ import annotations

import sys
from pathlib import Path

import pytest

from cdmgen.schema_index import load_schema_dir

FIXTURES = Path(__file__).parent / "fixtures"

sys.path.insert(0, str(Path(__file__).parent))

CONTRACT_TYPES = {
    "interest_rate_swap": "InterestRateSwap",
    "equity_swap": "EquitySwap",
    "equity_option": "EquityOption",
    "commodity_option": "CommodityOption",
    "foreign_exchange": "ForeignExchange",
    "credit_default_swap": "CreditDefaultSwap",
}


@pytest.fixture(scope="session")
def tiny_schema_dir() -> Path:
    return FIXTURES / "tiny_schema"


@pytest.fixture(scope="session")
def cdm_schema_dir() -> Path:
    return FIXTURES / "cdm_schema"


@pytest.fixture(scope="session")
def examples_root() -> Path:
    return FIXTURES / "cdm_examples"


@pytest.fixture(scope="session")
def contracts_dir() -> Path:
    return FIXTURES / "contracts"


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return FIXTURES / "golden"


@pytest.fixture(scope="session")
def tiny_index(tiny_schema_dir):
    return load_schema_dir(tiny_schema_dir, "root.schema.json")


@pytest.fixture(scope="session")
def cdm_index(cdm_schema_dir):
    return load_schema_dir(cdm_schema_dir, "contract.schema.json")
