import pytest

from drivefuse.fixture import fixture_experiment_config, generate_fixture


@pytest.fixture(scope="session")
def small_fixture_dir(tmp_path_factory):
    """A small generated dataset shared by tests that need real files."""
    out = tmp_path_factory.mktemp("fixture")
    generate_fixture(out, n_train=90, n_test=36, seed=0)
    return out


@pytest.fixture
def small_config(small_fixture_dir):
    # fresh per test: ExperimentConfig is mutable
    return fixture_experiment_config(
        small_fixture_dir, epochs=2, seeds=(1,), batch_size=16
    )
