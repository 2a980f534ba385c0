"""Displacement metrics, the q-ablation harness and the spatial filtering study."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import MANEUVERS, LabeledScenario, ScenarioTensor, balanced_split
from .model import PredictorParams, TrainConfig, forward, prepare_batch, train
from .spectral import Spectrum, factor_bases, filter_spatial, gft_forward, gft_inverse


def _displacements(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim < 2 or pred.shape[-2] != 2:
        raise ValueError(f"expected matching (..., 2, H) trajectories, got {pred.shape} and {truth.shape}")
    d = pred - truth
    return np.hypot(d[..., 0, :], d[..., 1, :])


def ade(pred, truth) -> float:
    """Mean Euclidean displacement over the horizon (averaged over any batch axes)."""
    return float(_displacements(pred, truth).mean())


def fde(pred, truth) -> float:
    """Euclidean displacement at the last step (averaged over any batch axes)."""
    return float(_displacements(pred, truth)[..., -1].mean())


METRIC_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "MetricReport",
    "type": "object",
    "required": ["ade_m", "fde_m", "scenario_count", "per_maneuver"],
    "properties": {
        "ade_m": {"type": "number", "minimum": 0},
        "fde_m": {"type": "number", "minimum": 0},
        "scenario_count": {"type": "integer", "minimum": 1},
        "per_maneuver": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["ade_m", "fde_m", "count"],
                "properties": {
                    "ade_m": {"type": "number", "minimum": 0},
                    "fde_m": {"type": "number", "minimum": 0},
                    "count": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}


@dataclass
class MetricReport:
    ade_m: float
    fde_m: float
    scenario_count: int
    per_maneuver: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [("all", self.scenario_count, self.ade_m, self.fde_m)]
        rows += [(k, v["count"], v["ade_m"], v["fde_m"]) for k, v in sorted(self.per_maneuver.items())]
        lines = [f"{'subset':<20}{'count':>8}{'ADE [m]':>12}{'FDE [m]':>12}"]
        lines += [f"{name:<20}{n:>8d}{a:>12.4f}{f:>12.4f}" for name, n, a, f in rows]
        return "\n".join(lines)


def predict_targets(params: PredictorParams, scenarios: Sequence[LabeledScenario]) -> np.ndarray:
    """(B, 2, H_pred) target predictions for a batch of scenarios."""
    batch = prepare_batch(scenarios, params.p, with_future=False)
    full = gft_inverse(forward(params, batch.inputs), *factor_bases(params.n_vehicles, params.h_pred))
    return full[:, :, 0, :]


def evaluate(params: PredictorParams, scenarios: Sequence[LabeledScenario]) -> MetricReport:
    if not scenarios:
        raise ValueError("no scenarios to evaluate")
    pred = predict_targets(params, scenarios)
    truth = np.stack([sc.ground_truth for sc in scenarios])
    disp = _displacements(pred, truth)
    per = {}
    labels = np.array([sc.maneuver or "unlabelled" for sc in scenarios])
    for name in (*MANEUVERS, "unlabelled"):
        sel = labels == name
        if sel.any():
            per[name] = {
                "ade_m": float(disp[sel].mean()),
                "fde_m": float(disp[sel, -1].mean()),
                "count": int(sel.sum()),
            }
    return MetricReport(float(disp.mean()), float(disp[:, -1].mean()), len(scenarios), per)


@dataclass
class AblationRow:
    q: int
    ade_m: float
    fde_m: float
    final_train_loss: float


def run_q_ablation(
    scenarios: Sequence[LabeledScenario],
    q_values: Iterable[int],
    config: TrainConfig,
    train_fraction: float = 0.7,
) -> list[AblationRow]:
    """Train one model per ``q`` on the same seeded split and report test metrics."""
    q_values = [int(q) for q in q_values]
    if not scenarios:
        raise ValueError("no scenarios")
    h_pred = scenarios[0].h_pred
    bad = [q for q in q_values if not 1 <= q <= h_pred]
    if bad:
        raise ValueError(f"q values {bad} violate 1 <= q <= H_pred = {h_pred}")
    train_set, test_set = balanced_split(scenarios, train_fraction, config.seed)
    rows = []
    for q in q_values:
        result = train(train_set, replace(config, q=q))
        rep = evaluate(result.params, test_set)
        rows.append(AblationRow(q, rep.ade_m, rep.fde_m, result.loss_curve[-1]))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'q':>5}{'ADE [m]':>12}{'FDE [m]':>12}{'train loss':>14}"]
    lines += [f"{r.q:>5d}{r.ade_m:>12.4f}{r.fde_m:>12.4f}{r.final_train_loss:>14.6g}" for r in rows]
    return "\n".join(lines)


@dataclass
class FilterVariant:
    keep: tuple[int, ...]
    filtered: np.ndarray
    spectrum: Spectrum


def filtering_study(
    scenario: ScenarioTensor,
    keep_spatial: Sequence[Iterable[int]],
) -> list[FilterVariant]:
    """For each set of kept spatial indices, the filtered spectrum and the
    scenario reconstructed from it."""
    bases = factor_bases(scenario.n_slots, scenario.n_steps)
    spectrum = gft_forward(scenario, *bases)
    out = []
    for keep in keep_spatial:
        keep = tuple(sorted({int(i) for i in keep}))
        filt = filter_spatial(spectrum, keep)
        out.append(FilterVariant(keep, gft_inverse(filt, *bases), filt))
    return out


def cross_vehicle_std(values: np.ndarray) -> np.ndarray:
    """Standard deviation across the slot axis for every (feature, step)."""
    return np.asarray(values).std(axis=-2)
