import pytest

from ordhash import attention, dataio


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small separable synthetic dataset shared by read-only tests."""
    prefix = tmp_path_factory.mktemp("data") / "tiny"
    manifest, records = dataio.synth_generate(
        prefix, n_per_class=20, c=3, m=8, x=3, y=3, noise_sigma=0.1,
        seed=123, split="train",
    )
    return prefix, manifest, records


@pytest.fixture(scope="session")
def tiny_attention(tiny_dataset):
    _, manifest, records = tiny_dataset
    return attention.train_classifier(records, manifest.c, epochs=40, lr=0.5,
                                      seed=5)
