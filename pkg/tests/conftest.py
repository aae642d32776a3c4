import pytest

from mininet.data import load_dataset, load_manifest
from mininet.synthetic import make_disk_dataset


@pytest.fixture(scope="session")
def disk_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("disks")
    return make_disk_dataset(root, n_train=6, n_test=2, size=16, seed=3)


@pytest.fixture()
def disk_dataset(disk_manifest):
    return load_dataset(load_manifest(disk_manifest, (16, 16), "rgb"))
