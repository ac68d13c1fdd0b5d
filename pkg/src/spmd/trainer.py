"""Alternating block training of low-rank tensor margin classifiers.

The weight tensor W is either a plain vector (order-1 data), a rank-1 /
rank-R CP tensor, or a Tucker tensor. Each factor block (and, for Tucker,
the core) is updated in turn by solving the box dual QP of qp.py in a
whitened coordinate system where the block objective is exactly the primal
objective restricted to that block:

    mode m:  P = coefficient of V_m in the mode-m unfolding, A = P P' = L L',
             v = vec(V_m L),  z_i = vec(U_i P' L^{-T})
    core:    K = kron of factor Grams (highest mode leftmost) = L L',
             f~ = L' vec(F),  z_i = L^{-1} (x V_m' contractions)

L is the clamped eigenbasis square-root factor of the block metric (see
MetricRoot); with symmetric roots these are the usual A^{1/2} whitenings.

Both satisfy <W, Z_i> = v'z_i and ||W||_F^2 = v'v, so every block update
minimizes the full objective over that block and the objective sequence is
non-increasing.
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import qp as qpmod
from .data import LabeledDataset, batch_view
from .margins import summarize_scores
from .tensor import (DenseTensor, check_factor, cp_reconstruct, khatri_rao,
                     kron_chain, tucker_reconstruct, unfold, unvec)

KINDS = ("vector", "rank1", "cp", "tucker")

MODEL_MAGIC = b"SPMD"
MODEL_VERSION = 1
_KIND_TAGS = {k: i for i, k in enumerate(KINDS)}

EIG_CLAMP_REL = 1e-14


class TrainingError(RuntimeError):
    """Training aborted on a numerical failure; message carries diagnostics."""


class MetricCollapseError(TrainingError):
    """A block metric collapsed to zero (named block is unrecoverable)."""


class Hyper(NamedTuple):
    mu1: float
    mu2: float
    lam: float


@dataclass(frozen=True)
class MetricRoot:
    """Eigenvalue-clamped square-root factor of a block metric A.

    ``half = U diag(sqrt(w_clamped))`` and ``inv_half = half^{-1}``, so
    ``half @ half.T`` reproduces A with eigenvalues clamped below at
    ``EIG_CLAMP_REL * trace(A)/dim``. The eigenbasis (rather than symmetric)
    factor keeps the whitening identities exact to machine precision even
    for ill-conditioned A: the diagonal scalings cancel exactly wherever
    the root meets its inverse. The floor only guards zero and negative
    eigenvalues (a mode whose rank exceeds the product of the other ranks
    yields a structurally singular metric); it is kept near round-off so
    the clamp perturbs reconstructed norms by at most ~1e-14 * trace(A)
    relative terms. Whitened features stay bounded regardless: a feature
    component along eigenvector u scales as sqrt(u'Au)/sqrt(w_clamped) <= 1
    up to round-off, so shrinking the floor cannot blow them up.
    ``clamped`` counts raised eigenvalues.
    """

    half: np.ndarray
    inv_half: np.ndarray
    clamped: int


def psd_root(a: np.ndarray, context: str = "block") -> MetricRoot:
    """Clamped square-root factor (half @ half.T = A) of a symmetric PSD matrix."""
    a = np.asarray(a, dtype=np.float64)
    a = 0.5 * (a + a.T)
    tr = float(np.trace(a))
    if not np.isfinite(a).all():
        raise MetricCollapseError(f"{context}: metric has non-finite entries")
    if tr <= 0.0:
        raise MetricCollapseError(
            f"{context}: metric trace {tr:g} is not positive; block collapsed"
        )
    w, u = np.linalg.eigh(a)
    floor = EIG_CLAMP_REL * tr / a.shape[0]
    clamped = int(np.sum(w < floor))
    s = np.sqrt(np.maximum(w, floor))
    half = u * s
    inv_half = (u / s).T
    return MetricRoot(half, inv_half, clamped)


@dataclass
class TrainConfig:
    """Hyperparameters and controls for :func:`train`.

    kind: "vector", "rank1", "cp", or "tucker".
    ranks: [] for vector/rank1, [R] for cp, one rank per mode for tucker.
    lam is the hinge weight; mu1/mu2 weigh margin variance/mean. tol is the
    relative weight-change stopping threshold checked after each full sweep.
    """

    kind: str = "rank1"
    ranks: list = field(default_factory=list)
    mu1: float = 1.0
    mu2: float = 1.0
    lam: float = 1.0
    tol: float = 1e-2
    max_outer: int = 50
    qp_tol: float = 1e-8
    qp_max_passes: int = 4000
    seed: int = 0
    bias_feature: bool = False


@dataclass(frozen=True)
class WeightModel:
    """Trained weight tensor in factored form plus the settings that made it."""

    kind: str
    shape: tuple[int, ...]
    ranks: tuple[int, ...]
    factors: tuple
    core: DenseTensor | None
    hyper: Hyper
    bias_feature: bool = False

    def reconstruct(self) -> DenseTensor:
        """The full weight tensor (small shapes only; prediction never needs it)."""
        if self.kind == "vector":
            return DenseTensor(self.shape, self.factors[0][:, 0])
        if self.kind == "tucker":
            return tucker_reconstruct(self.core, list(self.factors))
        return cp_reconstruct(list(self.factors))

    def norm(self) -> float:
        return self.reconstruct().norm()


@dataclass
class TrainReport:
    """Objective trace and diagnostics from one training run."""

    kind: str
    n_train: int
    seed: int
    converged: bool
    iterations: int
    objectives: list            # one entry per block update, "init" first
    block_labels: list
    weight_norms: list
    history: list               # per-sweep dicts: iteration, objective, gamma_m, gamma_v, rel_change
    final_objective: float
    gamma_m: float
    gamma_v: float
    qp_passes: int
    ridge_events: int
    clamp_events: int
    wall_time: float


def _mode_ranks(kind: str, ranks, order: int) -> tuple[int, ...]:
    """Per-mode factor column counts implied by kind and the ranks list."""
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    ranks = [int(r) for r in (ranks or [])]
    if any(r < 1 for r in ranks):
        raise ValueError(f"ranks must be positive, got {ranks}")
    if kind == "vector":
        if order != 1:
            raise ValueError("vector kind needs order-1 samples; reshape first")
        if ranks not in ([], [1]):
            raise ValueError("vector kind takes no ranks")
        return (1,)
    if kind == "rank1":
        if ranks not in ([], [1] * order):
            raise ValueError("rank1 kind takes no ranks (all modes have rank 1)")
        return (1,) * order
    if kind == "cp":
        if len(ranks) != 1:
            raise ValueError(f"cp kind takes a single shared rank, got {ranks}")
        return (ranks[0],) * order
    if len(ranks) != order:
        raise ValueError(
            f"tucker kind needs one rank per mode ({order}), got {len(ranks)}"
        )
    return tuple(ranks)


def apply_bias(data: LabeledDataset) -> LabeledDataset:
    """Append a constant-1 slab along mode 1, absorbing a bias into the weight."""
    dims = data.dims
    arr = data.arrays()
    new = np.ones((len(data), dims[0] + 1) + dims[1:])
    new[:, : dims[0]] = arr
    from .data import flatten_batch

    meta = dict(data.meta)
    meta["bias_feature"] = True
    return LabeledDataset(flatten_batch(new), (dims[0] + 1,) + dims[1:],
                          data.labels, meta)


class _Workspace:
    """Per-dataset caches: batch view and per-mode unfolding index maps."""

    def __init__(self, data: LabeledDataset):
        self.data = data
        self.arrays = data.arrays()
        self._maps: dict[int, np.ndarray] = {}

    def unfold_map(self, mode: int) -> np.ndarray:
        m = self._maps.get(mode)
        if m is None:
            p = self.data.samples.shape[1]
            idx = DenseTensor(self.data.dims, np.arange(p, dtype=np.float64))
            m = unfold(idx, mode).astype(np.int64)
            self._maps[mode] = m
        return m

    def mode_unfoldings(self, mode: int) -> np.ndarray:
        """(N, I_m, J) stack of per-sample mode unfoldings."""
        return self.data.samples[:, self.unfold_map(mode)]


def _mode_coefficient(kind: str, factors, core, mode: int) -> np.ndarray:
    """P with rows R_m such that unfold(W, mode) = V_mode @ P."""
    order = len(factors)
    others = [factors[k] for k in range(order - 1, -1, -1) if k != mode - 1]
    if kind == "tucker":
        return unfold(core, mode) @ kron_chain(others).T
    r = factors[0].shape[1]
    return khatri_rao(others, empty_cols=r).T


def _whiten_columns(stacks: np.ndarray, coeff: np.ndarray, root: MetricRoot) -> np.ndarray:
    """z_i = vec(U_i @ coeff' @ root^{-T}) for every sample, as a D x N matrix."""
    c = coeff.T @ root.inv_half.T
    feats = stacks @ c
    n = feats.shape[0]
    return feats.transpose(0, 2, 1).reshape(n, -1).T


def _contract_factors(arrays: np.ndarray, factors) -> np.ndarray:
    """Batched x_m V_m' contractions: (N, I1..IM) -> (N, R1..RM)."""
    t = arrays
    for v in factors:
        t = np.tensordot(t, v, axes=([1], [0]))
    return t


def mode_features_tucker(data: LabeledDataset, factors, core: DenseTensor,
                         mode: int):
    """Whitened mode-``mode`` features and the metric root for a Tucker block."""
    ws = _Workspace(data)
    p = _mode_coefficient("tucker", list(factors), core, mode)
    root = psd_root(p @ p.T, context=f"mode {mode} metric")
    return _whiten_columns(ws.mode_unfoldings(mode), p, root), root


def mode_features_cp(data: LabeledDataset, factors, mode: int):
    """Whitened mode-``mode`` features and the metric root for a CP block."""
    ws = _Workspace(data)
    p = _mode_coefficient("cp", list(factors), None, mode)
    root = psd_root(p @ p.T, context=f"mode {mode} metric")
    return _whiten_columns(ws.mode_unfoldings(mode), p, root), root


def core_features(data: LabeledDataset, factors):
    """Whitened core features and the Gram-Kronecker metric root."""
    ws = _Workspace(data)
    factors = [np.asarray(v, dtype=np.float64) for v in factors]
    grams = [v.T @ v for v in factors]
    k = kron_chain(list(reversed(grams)))
    root = psd_root(k, context="core metric")
    raw = _contract_factors(ws.arrays, factors)
    n = raw.shape[0]
    order = raw.ndim - 1
    flat = raw.transpose((0,) + tuple(range(order, 0, -1))).reshape(n, -1)
    return (flat @ root.inv_half.T).T, root


def block_update(features: np.ndarray, labels: np.ndarray, hyper: Hyper,
                 qp_tol: float = 1e-8, qp_max_passes: int = 4000,
                 warm_alpha: np.ndarray | None = None,
                 perm: np.ndarray | None = None):
    """Solve one whitened block: returns (v, QpSolution, assembly info)."""
    problem, recover, info = qpmod.assemble_dual(
        features, labels, hyper.mu1, hyper.mu2, hyper.lam)
    sol = qpmod.solve_box_qp(problem, tol=qp_tol, max_passes=qp_max_passes,
                             alpha0=warm_alpha, perm=perm)
    return recover(sol.alpha), sol, info


def primal_objective(weight: DenseTensor, data: LabeledDataset,
                     hyper: Hyper) -> float:
    """J(W) = 0.5||W||^2 + mu1 var - mu2 mean + (lam/N) sum hinge."""
    scores = data.samples @ weight.data
    summ = summarize_scores(scores, data.labels)
    hinge = np.maximum(0.0, 1.0 - summ.margins).sum()
    n = len(data)
    return float(0.5 * (weight.data @ weight.data)
                 + hyper.mu1 * summ.variance
                 - hyper.mu2 * summ.mean
                 + hyper.lam / n * hinge)


def _init_state(dims, mode_ranks, kind, rng):
    factors = []
    for i, r in zip(dims, mode_ranks):
        g = rng.standard_normal((i, max(r, 1)))
        if r <= i:
            q, _ = np.linalg.qr(g[:, :r])
            factors.append(q)
        else:
            g /= np.linalg.norm(g, axis=0, keepdims=True)
            factors.append(check_factor(g))
    core = None
    if kind == "tucker":
        core = DenseTensor(mode_ranks, 0.1 * rng.standard_normal(int(np.prod(mode_ranks))))
    return factors, core


def _reconstruct(kind, dims, factors, core) -> DenseTensor:
    if kind == "vector":
        return DenseTensor(dims, factors[0][:, 0])
    if kind == "tucker":
        return tucker_reconstruct(core, factors)
    return cp_reconstruct(factors)


def train(data: LabeledDataset, cfg: TrainConfig):
    """Alternating block optimization; returns (WeightModel, TrainReport).

    Blocks sweep modes 1..M (plus the Tucker core) each outer iteration,
    warm-starting every block's dual variables from its previous visit.
    Stops when the relative weight change after a sweep drops to cfg.tol,
    or after cfg.max_outer sweeps (with a warning, returning the
    best-objective iterate seen).
    """
    t0 = time.perf_counter()
    if len(data) < 2:
        raise ValueError("training needs at least two samples")
    if np.unique(data.labels).size < 2:
        raise ValueError("training needs at least one sample of each class")
    if cfg.bias_feature:
        data = apply_bias(data)
    dims = data.dims
    mode_ranks = _mode_ranks(cfg.kind, cfg.ranks, len(dims))
    for i, r in zip(dims, mode_ranks):
        if r > i:
            warnings.warn(f"rank {r} exceeds mode size {i}", stacklevel=2)
    hyper = Hyper(float(cfg.mu1), float(cfg.mu2), float(cfg.lam))
    if not cfg.lam > 0:
        raise ValueError("lambda must be positive")
    if cfg.mu1 < 0 or cfg.mu2 < 0:
        raise ValueError("mu1 and mu2 must be nonnegative")

    ss = np.random.SeedSequence(cfg.seed)
    rng = np.random.default_rng(ss)
    factors, core = _init_state(dims, mode_ranks, cfg.kind, rng)
    ws = _Workspace(data)
    n = len(data)

    blocks = [("mode", m) for m in range(1, len(dims) + 1)]
    if cfg.kind == "tucker":
        blocks.append(("core", 0))
    perms = {}
    for b, (_, which) in enumerate(blocks):
        prng = np.random.default_rng(np.random.SeedSequence([cfg.seed, b]))
        perms[b] = prng.permutation(n)
    warm = {b: None for b in range(len(blocks))}

    def snapshot():
        return [f.copy() for f in factors], core

    w = _reconstruct(cfg.kind, dims, factors, core)
    j = primal_objective(w, data, hyper)
    objectives = [j]
    block_labels = ["init"]
    weight_norms = [w.norm()]
    best = (j, snapshot())
    history = []
    qp_passes = ridge_events = clamp_events = 0
    converged = False
    outer = 0
    w_prev = w

    for outer in range(1, cfg.max_outer + 1):
        for b, (btype, which) in enumerate(blocks):
            if btype == "mode":
                m = which
                if cfg.kind == "vector":
                    feats = data.samples.T
                    root = None
                else:
                    coeff = _mode_coefficient(
                        "tucker" if cfg.kind == "tucker" else "cp",
                        factors, core, m)
                    root = psd_root(coeff @ coeff.T, context=f"mode {m} metric")
                    feats = _whiten_columns(ws.mode_unfoldings(m), coeff, root)
                v, sol, info = block_update(
                    feats, data.labels, hyper, cfg.qp_tol, cfg.qp_max_passes,
                    warm_alpha=warm[b], perm=perms[b])
                if cfg.kind == "vector":
                    factors[0] = v[:, None]
                else:
                    factors[m - 1] = unvec(v, (dims[m - 1], mode_ranks[m - 1])) @ root.inv_half
                    clamp_events += root.clamped
                label = f"mode{which}"
            else:
                feats, root = core_features(data, factors)
                v, sol, info = block_update(
                    feats, data.labels, hyper, cfg.qp_tol, cfg.qp_max_passes,
                    warm_alpha=warm[b], perm=perms[b])
                core = DenseTensor(mode_ranks, root.inv_half.T @ v)
                clamp_events += root.clamped
                label = "core"
            warm[b] = sol.alpha
            qp_passes += sol.iterations
            ridge_events += int(info["ridge_added"])

            w = _reconstruct(cfg.kind, dims, factors, core)
            j = primal_objective(w, data, hyper)
            if not np.isfinite(j):
                raise TrainingError(
                    f"objective became non-finite after {label} update "
                    f"(outer {outer}); last finite value {objectives[-1]:.6g}"
                )
            objectives.append(j)
            block_labels.append(label)
            weight_norms.append(w.norm())
            if j < best[0]:
                best = (j, snapshot())

        scores = data.samples @ w.data
        summ = summarize_scores(scores, data.labels)
        denom = w_prev.norm()
        diff = float(np.linalg.norm(w.data - w_prev.data))
        rel = diff / denom if denom > 0 else (0.0 if diff == 0.0 else np.inf)
        history.append({
            "iteration": outer,
            "objective": j,
            "gamma_m": summ.mean,
            "gamma_v": summ.variance,
            "rel_change": rel,
        })
        w_prev = w
        if rel <= cfg.tol:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"no convergence in {cfg.max_outer} sweeps "
            f"(last relative change {history[-1]['rel_change']:.3g}); "
            "returning best iterate",
            stacklevel=2,
        )
        if objectives[-1] > best[0]:
            factors, core = best[1]

    model = WeightModel(
        kind=cfg.kind,
        shape=dims,
        ranks=mode_ranks,
        factors=tuple(f.copy() for f in factors),
        core=core,
        hyper=hyper,
        bias_feature=cfg.bias_feature,
    )
    w = model.reconstruct()
    scores = data.samples @ w.data
    summ = summarize_scores(scores, data.labels)
    report = TrainReport(
        kind=cfg.kind,
        n_train=n,
        seed=cfg.seed,
        converged=converged,
        iterations=outer,
        objectives=objectives,
        block_labels=block_labels,
        weight_norms=weight_norms,
        history=history,
        final_objective=primal_objective(w, data, hyper),
        gamma_m=summ.mean,
        gamma_v=summ.variance,
        qp_passes=qp_passes,
        ridge_events=ridge_events,
        clamp_events=clamp_events,
        wall_time=time.perf_counter() - t0,
    )
    return model, report


# --- prediction ---------------------------------------------------------------


def decision_scores(model: WeightModel, samples: np.ndarray,
                    dims: tuple[int, ...]) -> np.ndarray:
    """<W, Z_i> for flat-row samples, evaluated in factored form."""
    if tuple(dims) != model.shape:
        raise ValueError(f"sample dims {tuple(dims)} do not match model shape {model.shape}")
    if model.kind == "vector":
        return samples @ model.factors[0][:, 0]
    t = _contract_factors(batch_view(samples, model.shape), list(model.factors))
    if model.kind == "tucker":
        n = t.shape[0]
        order = t.ndim - 1
        flat = t.transpose((0,) + tuple(range(order, 0, -1))).reshape(n, -1)
        return flat @ model.core.data
    r = model.ranks[0]
    idx = (slice(None),) + tuple([np.arange(r)] * (t.ndim - 1))
    diag = t[idx]
    return diag.sum(axis=1) if diag.ndim > 1 else diag


def predict(model: WeightModel, sample) -> tuple[int, float]:
    """(label, raw score) for one sample; score >= 0 maps to +1.

    Accepts a DenseTensor or an ndarray. For bias-augmented models a sample
    in the original (unaugmented) shape is augmented automatically.
    """
    if isinstance(sample, DenseTensor):
        dims, flat = sample.dims, sample.data
    else:
        t = DenseTensor.from_array(np.asarray(sample, dtype=np.float64))
        dims, flat = t.dims, t.data
    if model.bias_feature and dims != model.shape:
        expect = (model.shape[0] - 1,) + model.shape[1:]
        if dims != expect:
            raise ValueError(
                f"sample dims {dims} match neither the model shape {model.shape} "
                f"nor the pre-bias shape {expect}"
            )
        arr = np.ones(model.shape)
        arr[: dims[0]] = DenseTensor(dims, flat).to_array()
        flat = DenseTensor.from_array(arr).data
        dims = model.shape
    score = float(decision_scores(model, flat[None, :], dims)[0])
    return (1 if score >= 0.0 else -1), score


# --- model files ----------------------------------------------------------------
#
# Layout (little-endian): magic "SPMD", u32 version, u8 kind tag, u8 bias flag,
# u8 order M, M x u32 dims, M x u32 ranks, 3 x f64 hyper (mu1, mu2, lam),
# then each factor's I_m x R_m float64 buffer column-major, then (tucker only)
# the core's flat buffer.


def save_model(path: str, model: WeightModel) -> None:
    """Write the model file; loading reproduces every float bit-exactly."""
    m = len(model.shape)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IBBB", MODEL_VERSION, _KIND_TAGS[model.kind],
                            int(model.bias_feature), m))
        f.write(struct.pack(f"<{m}I", *model.shape))
        f.write(struct.pack(f"<{m}I", *model.ranks))
        f.write(struct.pack("<3d", *model.hyper))
        for v in model.factors:
            f.write(np.asarray(v, dtype="<f8").ravel(order="F").tobytes())
        if model.kind == "tucker":
            f.write(model.core.data.astype("<f8").tobytes())


def load_model(path: str) -> WeightModel:
    """Read a model file written by :func:`save_model`."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic {blob[:4]!r})")
    off = 4
    version, tag, bias, m = struct.unpack_from("<IBBB", blob, off)
    off += 7
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    kinds = {v: k for k, v in _KIND_TAGS.items()}
    if tag not in kinds:
        raise ValueError(f"{path}: unknown kind tag {tag}")
    kind = kinds[tag]
    shape = struct.unpack_from(f"<{m}I", blob, off)
    off += 4 * m
    ranks = struct.unpack_from(f"<{m}I", blob, off)
    off += 4 * m
    hyper = Hyper(*struct.unpack_from("<3d", blob, off))
    off += 24

    def take(count):
        nonlocal off
        end = off + 8 * count
        if end > len(blob):
            raise ValueError(f"{path}: truncated model file")
        out = np.frombuffer(blob[off:end], dtype="<f8").copy()
        off = end
        return out

    factors = []
    for i, r in zip(shape, ranks):
        factors.append(unvec(take(i * r), (i, r)))
    core = None
    if kind == "tucker":
        core = DenseTensor(ranks, take(int(np.prod(ranks))))
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return WeightModel(kind=kind, shape=tuple(int(d) for d in shape),
                       ranks=tuple(int(r) for r in ranks),
                       factors=tuple(factors), core=core, hyper=hyper,
                       bias_feature=bool(bias))
