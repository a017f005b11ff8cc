import numpy as np
import pytest
from hypothesis import settings
from PIL import Image

from CrowdKit.config import EncoderConfig, RunConfig
from CrowdKit.encoders import load_encoders
from CrowdKit.synthetic import make_oracle_dataset

settings.register_profile("crowd_kit", deadline=None, database=None)
settings.load_profile("crowd_kit")


@pytest.fixture
def mock_encoder_cfg():
    return EncoderConfig(backend="mock")


@pytest.fixture
def bundle(mock_encoder_cfg):
    return load_encoders(mock_encoder_cfg)


@pytest.fixture
def make_infer_cfg():
    """Build an ``InferenceConfig`` from the default run config on the mock backend."""

    def factory(p=3, **section):
        run = RunConfig(encoder=EncoderConfig(backend="mock"))
        for key, value in section.items():
            setattr(run.inference, key, value)
        return run.inference_config(p=p)

    return factory


@pytest.fixture(scope="session")
def oracle_manifest_path(tmp_path_factory):
    return make_oracle_dataset(tmp_path_factory.mktemp("oracle"), name="synthetic", n_images=20, p=3, seed=0)


@pytest.fixture
def write_png(tmp_path):
    def factory(name, pixels):
        path = tmp_path / name
        Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path, format="PNG")
        return path

    return factory
