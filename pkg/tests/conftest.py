import numpy as np
import pytest

from rfdistill.features import N_FEATURES, recompute_derived

HEADER = "StartTime,Dur,Proto,SrcAddr,Sport,Dir,DstAddr,Dport,State,sTos,dTos,TotPkts,TotBytes,SrcBytes,Label\n"


@pytest.fixture
def write_csv(tmp_path):
    def _write(rows, name="flows.binetflow", header=HEADER):
        path = tmp_path / name
        path.write_text(header + "".join(r + "\n" for r in rows), encoding="utf-8")
        return path
    return _write


def random_vectors(rng, n):
    """Feature vectors with consistent derived slots."""
    X = np.zeros((n, N_FEATURES))
    X[:, 0:2] = rng.integers(0, 2, (n, 2))
    X[:, 2:4] = rng.integers(0, 65536, (n, 2))
    X[:, 4] = rng.integers(0, 2, n)
    X[:, 5] = rng.integers(0, 12, n)
    X[:, 6] = np.where(rng.random(n) < 0.2, 0.0, rng.exponential(3.0, n))
    X[:, 7] = rng.integers(0, 4, n)
    X[:, 10] = rng.integers(40, 5000, n)
    X[:, 11] = np.where(rng.random(n) < 0.2, 0, rng.integers(40, 5000, n))
    X[:, 12] = rng.integers(1, 200, n)
    X[:, 14:16] = rng.integers(0, 4, (n, 2))
    return recompute_derived(X)
