from pathlib import Path

import pytest

from edgesplit.profiles import load_model_profile, load_scenario
from edgesplit.synthetic import load_generator_spec

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def vgg16_model():
    return load_model_profile(FIXTURES / "models" / "vgg16.profile")


@pytest.fixture(scope="session")
def toy_model():
    return load_model_profile(FIXTURES / "models" / "toy4.profile")


@pytest.fixture(scope="session")
def toy_genspec():
    return load_generator_spec(FIXTURES / "genspecs" / "toy4.genspec")


@pytest.fixture(scope="session")
def paper_scenario():
    return load_scenario(FIXTURES / "scenarios" / "paper_shape.scenario")


@pytest.fixture(scope="session")
def toy_scenario():
    return load_scenario(FIXTURES / "scenarios" / "toy.scenario")


@pytest.fixture(scope="session")
def all_scenarios():
    return {
        path.name: load_scenario(path)
        for path in sorted((FIXTURES / "scenarios").glob("*.scenario"))
    }
