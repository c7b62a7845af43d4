"""Synthetic matrix distributions.

Each generator takes a distribution ``seed`` and a ``draw`` index. Anything
the distribution shares across members (heavy-row indices, norm profiles,
planted structure) comes from ``default_rng([seed, 0])``; the per-member
randomness comes from ``default_rng([seed, 1, draw])``. Train and test
draws use disjoint draw indices.
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .io import load_json, read_matrix_bin, save_json, write_matrix_bin
from .positions import TrainingSet
from .second_order import ConstrainedLsProblem, L1Ball

KINDS = ("spiked", "zipfian", "lasso_planted", "low_rank")


def _shared_rng(seed):
    return np.random.default_rng([seed, 0])


def _draw_rng(seed, draw):
    return np.random.default_rng([seed, 1, draw])


def _unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def spiked_heavy_rows(n, s, seed):
    if s > n:
        raise ValueError(f"s={s} exceeds n={n}")
    return np.sort(_shared_rng(seed).choice(n, size=s, replace=False))


def gen_spiked(n, d, s, ell, seed, draw=0):
    """Rows are uniformly random unit vectors; the s heavy rows are scaled by ell."""
    heavy = spiked_heavy_rows(n, s, seed)
    A = _unit_rows(_draw_rng(seed, draw), n, d)
    A[heavy] *= ell
    return A


def zipfian_squared_norms(n_target):
    """Level i >= 1 holds 2**(i+1) rows of squared norm n**2 / 2**(2i); last level truncated."""
    norms = []
    i = 1
    while len(norms) < n_target:
        count = min(2 ** (i + 1), n_target - len(norms))
        norms.extend([n_target**2 / 2 ** (2 * i)] * count)
        i += 1
    return np.array(norms)


def gen_zipfian(n_target, d, seed, draw=0):
    if d < n_target:
        raise ValueError(f"orthogonal rows need d >= n (got d={d}, n={n_target})")
    sq = zipfian_squared_norms(n_target)[_shared_rng(seed).permutation(n_target)]
    Q, _ = np.linalg.qr(_draw_rng(seed, draw).standard_normal((d, n_target)))
    return Q.T * np.sqrt(sq)[:, None]


def lasso_heavy_rows(n, heavy_count, seed):
    if heavy_count > n:
        raise ValueError(f"heavy_count={heavy_count} exceeds n={n}")
    return np.sort(_shared_rng(seed).choice(n, size=heavy_count, replace=False))


def gen_lasso_planted(n, d, heavy_count, heavy_scale, seed, draws=(0,), noise=0.5,
                      lam=1.0, l1_ratio=1.2):
    """LASSO problems whose design matrices share a planted set of heavy rows.

    b = A x_true + noise * N(0, 1) with ||x_true||_1 = l1_ratio * lam.
    """
    heavy = lasso_heavy_rows(n, heavy_count, seed)
    problems = []
    for draw in draws:
        rng = _draw_rng(seed, draw)
        A = rng.standard_normal((n, d))
        A[heavy] *= heavy_scale
        x = rng.standard_normal(d)
        x *= l1_ratio * lam / np.abs(x).sum()
        b = A @ x + noise * rng.standard_normal(n)
        problems.append(ConstrainedLsProblem(A, b, L1Ball(lam)))
    return problems


def gen_low_rank(n, d, rank, seed, draw=0, drift=0.3, noise=0.05):
    """Slowly varying low-rank matrices plus noise (a stand-in for video frames).

    A = L (R + drift * E) + noise * N with L, R shared by the distribution.
    Row scales of L are log-normal, so some rows dominate the row space.
    """
    shared = _shared_rng(seed)
    L = shared.standard_normal((n, rank)) * np.exp(shared.standard_normal((n, 1)))
    R = shared.standard_normal((rank, d))
    rng = _draw_rng(seed, draw)
    A = L @ (R + drift * rng.standard_normal((rank, d)))
    scale = np.sqrt(np.mean(A**2))
    return A + noise * scale * rng.standard_normal((n, d))


@dataclass
class DistributionSpec:
    kind: str
    n: int
    d: int
    n_train: int = 5
    n_test: int = 5
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}; expected one of {KINDS}")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("need n_train >= 1 and n_test >= 0")

    def to_dict(self):
        return asdict(self)


def generate(spec):
    """Draw a TrainingSet; for lasso_planted the matching b vectors are returned too.

    Returns ``(training_set, bs)`` where ``bs`` is None except for LASSO data.
    """
    draws = list(range(spec.n_train + spec.n_test))
    p = spec.params
    bs = None
    if spec.kind == "spiked":
        mats = [gen_spiked(spec.n, spec.d, p.get("s", 4), p.get("ell", 10.0), spec.seed, t) for t in draws]
    elif spec.kind == "zipfian":
        mats = [gen_zipfian(spec.n, spec.d, spec.seed, t) for t in draws]
    elif spec.kind == "low_rank":
        mats = [gen_low_rank(spec.n, spec.d, p.get("rank", 10), spec.seed, t,
                             p.get("drift", 0.3), p.get("noise", 0.05)) for t in draws]
    else:
        probs = gen_lasso_planted(spec.n, spec.d, p.get("heavy_count", 10), p.get("heavy_scale", 50.0),
                                  spec.seed, draws, p.get("noise", 0.5), p.get("lam", 1.0),
                                  p.get("l1_ratio", 1.2))
        mats = [pr.A for pr in probs]
        bs = [pr.b for pr in probs]
    ts = TrainingSet(mats, list(range(spec.n_train)), list(range(spec.n_train, len(draws))))
    return ts, bs


def save_ensemble(directory, spec, ts, bs=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, A in enumerate(ts.matrices):
        name = f"A_{i:03d}.bin"
        write_matrix_bin(directory / name, A)
        entry = {"A": name}
        if bs is not None:
            bname = f"b_{i:03d}.bin"
            write_matrix_bin(directory / bname, np.asarray(bs[i]).reshape(len(bs[i]), -1))
            entry["b"] = bname
        files.append(entry)
    save_json(directory / "manifest.json", {
        "spec": spec.to_dict(),
        "seeds": {"distribution": spec.seed, "draws": list(range(len(ts.matrices)))},
        "split": {"train": list(ts.train), "test": list(ts.test)},
        "files": files,
    })


def load_ensemble(directory):
    """Inverse of save_ensemble: (spec, training_set, bs_or_None)."""
    directory = Path(directory)
    man = load_json(directory / "manifest.json")
    spec = DistributionSpec(**man["spec"])
    mats = [read_matrix_bin(directory / f["A"]) for f in man["files"]]
    bs = None
    if man["files"] and "b" in man["files"][0]:
        bs = [read_matrix_bin(directory / f["b"]).reshape(-1) for f in man["files"]]
    ts = TrainingSet(mats, man["split"]["train"], man["split"]["test"])
    return spec, ts, bs
