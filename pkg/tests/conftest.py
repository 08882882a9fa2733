import numpy as np
import pytest

from dpnas.agent import random_episode
from dpnas.nsc import SpaceConfig, parse_codes


def random_blocks(n, seed, space=None, want_dead=None):
    """``n`` uniformly sampled legal code sequences."""
    space = space or SpaceConfig()
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        codes = random_episode(space, rng)
        if want_dead is not None:
            from dpnas.nsc import prune_inactive, validate
            if (prune_inactive(validate(codes)).n_inactive > 0) != want_dead:
                continue
        out.append(codes)
    return out


@pytest.fixture
def space():
    return SpaceConfig()


@pytest.fixture
def minimal():
    return parse_codes([(1, 1, 3, 0, 0), (2, 7, 0, 0, 0)])
