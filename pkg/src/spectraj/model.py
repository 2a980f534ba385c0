"""Spectral-domain trajectory predictor.

Two dense layers map the flattened low-frequency observation spectrum to the
``q`` lowest temporal columns of the future (x, y) spectrum:

    h = GELU(W1 s + b1),   z = sigmoid(W2 h + b2),   c = lo + (hi - lo) z

``c`` is placed in a (2, N, H_pred) spectrum (columns >= q stay zero) and the
inverse transform yields every slot's trajectory. Training minimises the
target's x-MSE + y-MSE through that fixed inverse transform.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from . import _kernels
from .data import N_FEATURES, LabeledScenario, ScenarioTensor
from .spectral import Eigenbasis, factor_bases, flatten_subset, gft_forward, gft_inverse

log = logging.getLogger(__name__)

HIDDEN_PER_NODE = 32
OUTPUT_MARGIN = 0.05
# Smallest half-width of an output scaling interval.
MIN_OUTPUT_PAD = 1e-3
CHECKPOINT_FORMAT = "spectraj-checkpoint"
CHECKPOINT_VERSION = 1
_PARAM_NAMES = ("w1", "b1", "w2", "b2")
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class TrainingDivergedError(RuntimeError):
    pass


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def sigmoid(x):
    return expit(x)


@dataclass(eq=False)
class PredictorParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    p: int
    q: int
    n_vehicles: int
    h_pred: int
    out_lo: np.ndarray
    out_hi: np.ndarray
    in_mean: np.ndarray
    in_std: np.ndarray
    seed: int = 0
    n_features: int = N_FEATURES

    def __post_init__(self):
        z = self.n_features * self.n_vehicles * self.p
        hid = self.w1.shape[0]
        out = 2 * self.n_vehicles * self.q
        if not 1 <= self.q <= self.h_pred or not 1 <= self.p <= self.h_pred:
            raise ValueError(f"need 1 <= p, q <= H_pred={self.h_pred}; got p={self.p}, q={self.q}")
        expected = {
            "w1": (hid, z), "b1": (hid,), "w2": (out, hid), "b2": (out,),
            "out_lo": (out,), "out_hi": (out,), "in_mean": (z,), "in_std": (z,),
        }
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @property
    def z(self) -> int:
        return self.n_features * self.n_vehicles * self.p

    @property
    def output_size(self) -> int:
        return 2 * self.n_vehicles * self.q

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in _PARAM_NAMES}

    def copy(self) -> "PredictorParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in kw.items():
            if isinstance(v, np.ndarray):
                kw[k] = v.copy()
        return PredictorParams(**kw)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


def init_params(
    n_vehicles: int,
    h_pred: int,
    p: int,
    q: int,
    seed: int = 0,
    hidden_per_node: int = HIDDEN_PER_NODE,
    n_features: int = N_FEATURES,
) -> PredictorParams:
    """Uniform(+-1/sqrt(fan_in)) weights and biases; identity normalisation,
    output scaling (-1, 1)."""
    z = n_features * n_vehicles * p
    hid = n_features * n_vehicles * hidden_per_node
    out = 2 * n_vehicles * q
    rng = np.random.default_rng(seed)
    b1_lim, b2_lim = 1.0 / math.sqrt(z), 1.0 / math.sqrt(hid)
    return PredictorParams(
        w1=rng.uniform(-b1_lim, b1_lim, size=(hid, z)),
        b1=rng.uniform(-b1_lim, b1_lim, size=hid),
        w2=rng.uniform(-b2_lim, b2_lim, size=(out, hid)),
        b2=rng.uniform(-b2_lim, b2_lim, size=out),
        p=p, q=q, n_vehicles=n_vehicles, h_pred=h_pred,
        out_lo=-np.ones(out), out_hi=np.ones(out),
        in_mean=np.zeros(z), in_std=np.ones(z),
        seed=seed, n_features=n_features,
    )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    p: Optional[int] = None
    q: Optional[int] = None
    hidden_per_node: int = HIDDEN_PER_NODE

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# --------------------------------------------------------------------------- data preparation


@dataclass
class Batch:
    inputs: np.ndarray        # (B, Z) unnormalised s_p
    truths: np.ndarray        # (B, 2, H_pred) target future x, y
    future_spectra: Optional[np.ndarray]  # (B, 2, N, H_pred)


def observation_spectra(observations: np.ndarray, bases: tuple[Eigenbasis, Eigenbasis]) -> np.ndarray:
    return gft_forward(observations, *bases).coefficients


def prepare_batch(scenarios: Sequence[LabeledScenario], p: int, with_future: bool = True) -> Batch:
    """Model inputs (upsampled observation spectra) and targets for ``scenarios``."""
    if not scenarios:
        raise ValueError("empty scenario list")
    h_pred = scenarios[0].h_pred
    n = scenarios[0].raw_observation.n_slots
    for sc in scenarios:
        if sc.h_pred != h_pred or sc.raw_observation.n_slots != n:
            raise ValueError("scenarios have inconsistent shapes")
    bases = factor_bases(n, h_pred)
    obs = np.stack([sc.observation.values for sc in scenarios])
    inputs = flatten_subset(observation_spectra(obs, bases), p)
    if not with_future:
        return Batch(inputs, np.zeros((len(scenarios), 2, h_pred)), None)
    fut = np.stack([sc.future[:2] for sc in scenarios])
    return Batch(inputs, fut[:, :, 0, :].copy(), gft_forward(fut, *bases).coefficients)


def fit_normalization(params: PredictorParams, batch: Batch) -> None:
    """Set input standardisation and output min/max scaling from training data."""
    mean = batch.inputs.mean(axis=0)
    # One scale per feature: the centred (N x p) block of each feature gets
    # unit mean squared norm. Weak high-frequency coefficients stay weak.
    centred = (batch.inputs - mean).reshape(len(batch.inputs), params.n_features, -1)
    scale = np.sqrt(np.mean(np.sum(centred**2, axis=2), axis=0))
    scale = np.where(scale > 1e-8, scale, 1.0)
    params.in_mean = mean
    params.in_std = np.repeat(scale, params.n_vehicles * params.p)
    target = batch.future_spectra[..., : params.q].reshape(len(batch.inputs), -1)
    lo, hi = target.min(axis=0), target.max(axis=0)
    pad = np.maximum(OUTPUT_MARGIN * (hi - lo), MIN_OUTPUT_PAD)
    params.out_lo, params.out_hi = lo - pad, hi + pad


# --------------------------------------------------------------------------- forward / loss


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}; parameters may have diverged")


def _forward_parts(params: PredictorParams, s_p: np.ndarray):
    x = (s_p - params.in_mean) / params.in_std
    a1 = x @ params.w1.T + params.b1
    h = gelu(a1)
    a2 = h @ params.w2.T + params.b2
    zs = sigmoid(a2)
    c = params.out_lo + (params.out_hi - params.out_lo) * zs
    return x, a1, h, zs, c


def forward(params: PredictorParams, s_p: np.ndarray) -> np.ndarray:
    """Predicted spectrum, shape ``(..., 2, N, H_pred)``; columns ``>= q`` are zero."""
    s_p = np.asarray(s_p, dtype=np.float64)
    if s_p.shape[-1] != params.z:
        raise ValueError(f"input length {s_p.shape[-1]} != Z = {params.z}")
    _, _, h, _, c = _forward_parts(params, s_p)
    # the sigmoid would hide an exploded hidden layer
    _check_finite(h, "hidden layer")
    _check_finite(c, "forward pass")
    out = np.zeros(s_p.shape[:-1] + (2, params.n_vehicles, params.h_pred))
    out[..., : params.q] = c.reshape(s_p.shape[:-1] + (2, params.n_vehicles, params.q))
    return out


def predict_trajectories(
    params: PredictorParams,
    scenario: ScenarioTensor,
    bases: Optional[tuple[Eigenbasis, Eigenbasis]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Full (2, N, H_pred) prediction and the target's (2, H_pred) trajectory.

    ``scenario`` must already be upsampled to ``H_pred`` steps.
    """
    if scenario.n_steps != params.h_pred:
        raise ValueError(f"scenario has {scenario.n_steps} steps; upsample to {params.h_pred} first")
    bases = bases or factor_bases(params.n_vehicles, params.h_pred)
    s_p = flatten_subset(gft_forward(scenario, *bases), params.p)
    full = gft_inverse(forward(params, s_p), *bases)
    return full, full[:, 0, :]


def loss(pred: np.ndarray, truth: np.ndarray) -> float:
    """MSE of x plus MSE of y for (2, H) trajectories."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[-2] != 2:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.sum(np.mean((pred - truth) ** 2, axis=-1), axis=-1).mean())


def _target_rows(params: PredictorParams):
    basis_s, basis_t = factor_bases(params.n_vehicles, params.h_pred)
    return basis_s.eigenvectors[0], basis_t.eigenvectors[:, : params.q]


def batch_loss(params: PredictorParams, inputs: np.ndarray, truths: np.ndarray) -> float:
    """Mean per-scenario loss of the target trajectory."""
    u0, ut = _target_rows(params)
    *_, c = _forward_parts(params, inputs)
    c = c.reshape(len(inputs), 2, params.n_vehicles, params.q)
    y = np.einsum("n,blnj->blj", u0, c) @ ut.T
    return float(np.mean(np.sum(np.mean((y - truths) ** 2, axis=-1), axis=-1)))


def loss_and_grads(params: PredictorParams, inputs: np.ndarray, truths: np.ndarray):
    """Batch loss and analytic gradients for w1, b1, w2, b2."""
    b = len(inputs)
    u0, ut = _target_rows(params)
    x, a1, h, zs, c = _forward_parts(params, inputs)
    c4 = c.reshape(b, 2, params.n_vehicles, params.q)
    y = np.einsum("n,blnj->blj", u0, c4) @ ut.T
    err = y - truths
    value = float(np.mean(np.sum(np.mean(err**2, axis=-1), axis=-1)))

    d_y = 2.0 * err / (truths.shape[-1] * b)
    d_c = (u0[:, None] * (d_y @ ut)[:, :, None, :]).reshape(b, -1)
    d_a2 = d_c * (params.out_hi - params.out_lo) * zs * (1.0 - zs)
    d_h = d_a2 @ params.w2
    d_a1 = d_h * gelu_grad(a1)
    grads = {
        "w2": d_a2.T @ h,
        "b2": d_a2.sum(axis=0),
        "w1": d_a1.T @ x,
        "b1": d_a1.sum(axis=0),
    }
    return value, grads


# --------------------------------------------------------------------------- training


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: PredictorParams) -> "AdamState":
        arrs = params.arrays()
        return cls(0, {k: np.zeros_like(a) for k, a in arrs.items()}, {k: np.zeros_like(a) for k, a in arrs.items()})


def adam_update(params: PredictorParams, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name in _PARAM_NAMES:
        _kernels.adam_step(
            getattr(params, name), grads[name], state.m[name], state.v[name],
            cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, c1, c2,
        )


@dataclass
class TrainResult:
    params: PredictorParams
    loss_curve: list[float]
    adam: AdamState
    epochs_done: int


def train(
    dataset: Sequence[LabeledScenario],
    config: TrainConfig,
    resume: Optional[TrainResult] = None,
) -> TrainResult:
    """Mini-batch Adam on the target-trajectory loss.

    Epoch ``e`` shuffles with ``default_rng([seed, e])`` so a run resumed from
    a checkpoint continues exactly as an uninterrupted one. ``resume`` keeps
    its normalisation statistics; ``config.epochs`` more epochs are run.
    """
    if not dataset:
        raise ValueError("training set is empty")
    h_pred = dataset[0].h_pred
    n = dataset[0].raw_observation.n_slots
    if resume is None:
        p = config.p if config.p is not None else h_pred
        q = config.q if config.q is not None else h_pred
        params = init_params(n, h_pred, p, q, seed=config.seed, hidden_per_node=config.hidden_per_node)
        batch = prepare_batch(dataset, p)
        fit_normalization(params, batch)
        adam = AdamState.zeros_like(params)
        curve: list[float] = []
        start = 0
    else:
        params = resume.params.copy()
        if params.h_pred != h_pred or params.n_vehicles != n:
            raise ValueError("checkpoint shape does not match the dataset")
        batch = prepare_batch(dataset, params.p, with_future=False)
        batch.truths = np.stack([sc.ground_truth for sc in dataset])
        adam = AdamState(resume.adam.step, {k: v.copy() for k, v in resume.adam.m.items()},
                         {k: v.copy() for k, v in resume.adam.v.items()})
        curve = list(resume.loss_curve)
        start = resume.epochs_done

    inputs, truths = batch.inputs, batch.truths
    count = len(inputs)
    for epoch in range(start, start + config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(count)
        total = 0.0
        for lo in range(0, count, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            value, grads = loss_and_grads(params, inputs[idx], truths[idx])
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} in epoch {epoch + 1}, batch starting {lo}")
            adam_update(params, grads, adam, config)
            total += value * len(idx)
        curve.append(total / count)
        log.debug("epoch %d loss %.6g", epoch + 1, curve[-1])
    if not params.all_finite():
        raise TrainingDivergedError("parameters became non-finite")
    return TrainResult(params, curve, adam, start + config.epochs)


def overfit_steps(
    scenario: LabeledScenario,
    params: PredictorParams,
    steps: int,
    config: TrainConfig,
) -> list[float]:
    """Run ``steps`` full-batch Adam updates on one scenario; returns per-step loss."""
    batch = prepare_batch([scenario], params.p, with_future=False)
    truths = scenario.ground_truth[None]
    adam = AdamState.zeros_like(params)
    losses = []
    for _ in range(steps):
        value, grads = loss_and_grads(params, batch.inputs, truths)
        adam_update(params, grads, adam, config)
        losses.append(value)
    losses.append(batch_loss(params, batch.inputs, truths))
    return losses


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path, result: TrainResult, extra: Optional[dict] = None) -> Path:
    """Write an ``.npz`` checkpoint; layout documented in docs/checkpoint_format.md."""
    path = Path(path)
    prm = result.params
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "p": prm.p, "q": prm.q, "n_vehicles": prm.n_vehicles, "n_features": prm.n_features,
        "h_pred": prm.h_pred, "hidden": int(prm.w1.shape[0]), "seed": prm.seed,
        "epochs_done": result.epochs_done, "adam_step": result.adam.step,
        "loss_curve": [float(x) for x in result.loss_curve],
    }
    if extra:
        meta["extra"] = extra
    arrays = {name: getattr(prm, name) for name in (*_PARAM_NAMES, "out_lo", "out_hi", "in_mean", "in_std")}
    for name in _PARAM_NAMES:
        arrays[f"adam_m_{name}"] = result.adam.m[name]
        arrays[f"adam_v_{name}"] = result.adam.v[name]
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> TrainResult:
    with np.load(Path(path), allow_pickle=False) as data:
        try:
            meta = json.loads(str(data["meta"]))
        except KeyError:
            raise ValueError(f"{path}: not a checkpoint (no meta)") from None
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unknown format {meta.get('format')!r}")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arr = {k: data[k].copy() for k in data.files if k != "meta"}
    params = PredictorParams(
        **{k: arr[k] for k in (*_PARAM_NAMES, "out_lo", "out_hi", "in_mean", "in_std")},
        p=meta["p"], q=meta["q"], n_vehicles=meta["n_vehicles"], h_pred=meta["h_pred"],
        seed=meta["seed"], n_features=meta["n_features"],
    )
    adam = AdamState(
        meta["adam_step"],
        {k: arr[f"adam_m_{k}"] for k in _PARAM_NAMES},
        {k: arr[f"adam_v_{k}"] for k in _PARAM_NAMES},
    )
    return TrainResult(params, list(meta["loss_curve"]), adam, meta["epochs_done"])
