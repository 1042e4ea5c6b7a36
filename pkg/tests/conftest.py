import numpy as np
import pytest

from narsearch import archspace as asp


def generic_vocab(k: int) -> asp.OperatorVocabulary:
    return asp.OperatorVocabulary(
        tuple(asp.OperatorDescriptor(f"op{i}", i % 2 == 0) for i in range(k))
    )


def random_space(rng: np.random.Generator, fixed_skip: bool,
                 n_range=(2, 6), k_range=(2, 6)) -> asp.SearchSpaceSpec:
    n = int(rng.integers(*n_range))
    k = int(rng.integers(*k_range))
    frozen = None
    if fixed_skip:
        n_edges = asp.candidate_edges(n).n_edges
        frozen = tuple(int(b) for b in rng.integers(0, 2, n_edges))
    return asp.make_space(n, generic_vocab(k), frozen)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
