"""Node encoders: the hop-concatenation layer and the SGC baseline."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import adcore as ad
from .graphcore import Graph, hop_operators, self_loop_normalize


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(rng, in_dim: int, out_dim: int, hops: int) -> ad.ParamSet:
    """theta_e = {W_f: d x d', W_r: (hops+1)d' x d'}."""
    return ad.ParamSet(
        [
            ("W_f", glorot(rng, in_dim, out_dim)),
            ("W_r", glorot(rng, (hops + 1) * out_dim, out_dim)),
        ]
    )


def init_sgc(rng, in_dim: int, out_dim: int) -> ad.ParamSet:
    return ad.ParamSet([("W", glorot(rng, in_dim, out_dim))])


def _features(G) -> np.ndarray:
    return G.X if isinstance(G, Graph) else np.asarray(G, dtype=np.float64)


def encode(G, adjs, params: ad.ParamSet, rows=None) -> ad.Tensor:
    """Z = relu(concat(F, A_1 F, ..., A_l F) W_r) with F = relu(X W_f).

    ``adjs`` are the normalized hop operators for hops 1..l. If ``rows`` is
    given only those rows of Z are computed (F is still needed everywhere).
    """
    X = _features(G)
    W_f, W_r = params["W_f"], params["W_r"]
    if X.shape[1] != W_f.shape[0]:
        raise ad.ShapeError(f"feature dim mismatch: X {X.shape} vs W_f {W_f.shape}")
    hidden = W_f.shape[1]
    if W_r.shape[0] != (len(adjs) + 1) * hidden:
        raise ad.ShapeError(
            f"W_r {W_r.shape} expects {(len(adjs) + 1) * hidden} rows for {len(adjs)} hops"
        )
    if rows is None:
        F = ad.relu(ad.matmul(ad.Tensor(X), W_f))
        blocks = [F] + [ad.spmm(A, F) for A in adjs]
    else:
        # only the rows and their hop neighbourhoods contribute
        rows = np.asarray(rows, dtype=np.intp)
        sub = [sp.csr_matrix(A[rows]) for A in adjs]
        need = np.unique(np.concatenate([rows] + [S.indices for S in sub]).astype(np.intp))
        F = ad.relu(ad.matmul(ad.Tensor(X[need]), W_f))
        local = np.searchsorted(need, rows)
        blocks = [ad.gather_rows(F, local)] + [ad.spmm(S[:, need], F) for S in sub]
    R = ad.concat(blocks, axis=1)
    return ad.relu(ad.matmul(R, W_r))


def propagate_sgc(G, l: int, A: sp.spmatrix | None = None) -> np.ndarray:
    """Ã̂^l X computed by l sparse multiplies."""
    if l < 0:
        raise ValueError(f"propagation power must be >= 0, got {l}")
    X = _features(G)
    if l == 0:
        return X.copy()
    if A is None:
        A = G.adjacency()
    S = self_loop_normalize(A)
    out = X
    for _ in range(l):
        out = S @ out
    return np.asarray(out)


def encode_sgc(G, l: int, W, rows=None, propagated: np.ndarray | None = None) -> ad.Tensor:
    """Z = (Ã̂^l X) W."""
    S = propagate_sgc(G, l) if propagated is None else propagated
    if rows is not None:
        S = S[np.asarray(rows, dtype=np.intp)]
    return ad.matmul(ad.Tensor(S), W)


class GraphEncoder:
    """Graph plus cached propagation operators, encoding with a parameter set.

    ``kind`` is ``"hop"`` for the concatenation layer or ``"sgc"`` for the
    baseline swap.
    """

    def __init__(self, G: Graph, kind: str = "hop", hops: int = 2, sgc_power: int = 2):
        if kind not in ("hop", "sgc"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        self.G = G
        self.kind = kind
        self.hops = hops
        self.sgc_power = sgc_power
        if kind == "hop":
            self.adjs = hop_operators(G.adjacency(), hops)
            self.propagated = None
        else:
            self.adjs = []
            self.propagated = propagate_sgc(G, sgc_power)

    def init(self, rng, hidden: int) -> ad.ParamSet:
        if self.kind == "hop":
            return init_encoder(rng, self.G.feature_dim, hidden, self.hops)
        return init_sgc(rng, self.G.feature_dim, hidden)

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("W_f", "W_r") if self.kind == "hop" else ("W",)

    def __call__(self, params: ad.ParamSet, rows=None) -> ad.Tensor:
        if self.kind == "hop":
            return encode(self.G, self.adjs, params, rows=rows)
        return encode_sgc(self.G, self.sgc_power, params["W"], rows=rows,
                          propagated=self.propagated)
