import numpy as np
import pytest
import torch

from faceedit import fixtures, trainer


@pytest.fixture(scope="session", autouse=True)
def _single_thread():
    # Keeps timing stable and forwards deterministic on shared CI boxes.
    torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """Eight 64x64 procedural portraits with a landmarks sidecar."""
    root = tmp_path_factory.mktemp("fixture_data")
    fixtures.write_fixture_dataset(root, count=8, size=64, seed=0)
    return root


@pytest.fixture(scope="session")
def prepared_examples(fixture_dataset):
    images = trainer.load_training_images(fixture_dataset, (64, 64))
    return trainer.prepare_examples(images)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory, fixture_dataset):
    """A short real training run shared by checkpoint/service tests."""
    run_dir = tmp_path_factory.mktemp("toy_run")
    config = trainer.TrainConfig(
        datasetPath=str(fixture_dataset), runDir=str(run_dir), steps=4,
        batchSize=4, checkpointInterval=2, seed=101,
    )
    final = trainer.train_loop(config)
    return {"config": config, "run_dir": run_dir, "final": final}


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
