import pytest

from probekernel.relational.database import MAIN_BRANCH, BranchCatalog
from probekernel.workload import gen_dataset, gen_tasks, load_dataset


@pytest.fixture(scope="session")
def small_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("dataset-small")
    gen_dataset(str(d), seed=0, scale="small")
    return str(d)


@pytest.fixture(scope="session")
def medium_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("dataset-medium")
    gen_dataset(str(d), seed=0, scale="medium")
    return str(d)


@pytest.fixture()
def small_db(small_dir):
    return load_dataset(small_dir)


@pytest.fixture(scope="session")
def tasks20(small_dir):
    db = load_dataset(small_dir)
    return gen_tasks(BranchCatalog(db, MAIN_BRANCH), n_tasks=20, n_variants=50, seed=0)
