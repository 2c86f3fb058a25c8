import numpy as np
import pytest

from hypercloud.config import TrainConfig
from hypercloud.geometry import make_rng
from hypercloud.model import TargetArch, init_model

SMALL = dict(
    latent_dim=4,
    target_widths=(3, 8, 3),
    encoder_widths=(3, 8, 16),
    encoder_head=(16, 8),
    decoder_hidden=(16,),
)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def small_config():
    return TrainConfig(loss="cd", steps=5, seed=0, batch_size=2, log_every=1, **SMALL)


@pytest.fixture
def small_model():
    return init_model(
        SMALL["latent_dim"], TargetArch(SMALL["target_widths"]), SMALL["encoder_widths"],
        SMALL["encoder_head"], SMALL["decoder_hidden"], make_rng(7),
    )


def zero_model(model):
    """Copy of `model` with every parameter set to zero."""
    return type(model)(
        model.latent_dim, model.arch, model.encoder_widths, model.encoder_head, model.decoder_hidden,
        {k: np.zeros_like(v) for k, v in model.params.items()},
    )
