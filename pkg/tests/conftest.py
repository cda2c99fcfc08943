import numpy as np
import pytest

from cmin.config import RunConfig
from cmin.data import SynthConfig, gen_synthetic
from cmin.model import CMIN
from cmin.params import ParamTree
from cmin.tensor import Tensor


def toy_config(**kw) -> RunConfig:
    base = dict(widths=(4.0, 8.0), hidden=16, heads=2, embed_dim=6, gcn_layers=2, batch_size=4,
                epochs=2, seed=3)
    base.update(kw)
    return RunConfig(**base)


def toy_synth(**kw) -> SynthConfig:
    base = dict(vocab_size=12, feat_dim=5, min_len=12, max_len=12, min_width=3, max_width=6,
                min_query=6, max_query=6, n_train=2, n_test=2, seed=1)
    base.update(kw)
    return SynthConfig(**base)


def toy_model(cfg=None, synth=None):
    syn = gen_synthetic(synth or toy_synth())
    model = CMIN(cfg or toy_config(), syn.train.features[syn.train.queries[0].video_id].dim)
    return model, syn


def random_tree(rng, shapes: dict) -> ParamTree:
    return ParamTree({k: Tensor(rng.standard_normal(s) * 0.5, requires_grad=True) for k, s in shapes.items()})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
