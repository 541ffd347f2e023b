import pytest

from mpdgraph import model as gm

from helpers import BOX_DIM, EMBED_DIM, TITLE_DIM


@pytest.fixture
def tiny_mcfg():
    return gm.ModelConfig(box_dim=BOX_DIM, title_dim=TITLE_DIM, embed_dim=EMBED_DIM)
