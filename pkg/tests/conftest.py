import numpy as np

from kdia import nn


def make_random_model(seed, widths, split_index):
    rng = np.random.default_rng(seed)
    return nn.he_uniform_init(widths, split_index, rng)
