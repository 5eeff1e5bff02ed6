import numpy as np
import pytest

from accompanist import synthdata
from accompanist.indexing import build_index


class CorpusBundle:
    def __init__(self, train, etudes, test, labels, feats, table, index):
        self.train = train
        self.etudes = etudes
        self.test = test
        self.labels = labels
        self.feats = feats
        self.table = table
        self.index = index


@pytest.fixture(scope="session")
def corpus():
    """Small synthetic corpus + labels + index shared by read-only tests."""
    train, etudes, test = synthdata.synth_corpus(n_songs=8, seed=7, n_etudes=2, n_test=2)
    labels, feats, table = synthdata.label_corpus(train + etudes)
    index = build_index(train + etudes, labels, features=feats, quantiles=table)
    return CorpusBundle(train, etudes, test, labels, feats, table, index)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
