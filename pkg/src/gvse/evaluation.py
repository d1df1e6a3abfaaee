"""Class prototypes, zero-shot prediction, and metrics.

Seen-class latent prototypes are sample means; unseen prototypes come from
a ridge regression of the unseen attribute vector onto the seen attribute
rows (ridge parameter exactly 1), with the resulting coefficients
combining the seen prototypes. Prediction is the argmax of attribute
scores, optionally summed with latent-prototype scores. Metrics are
average per-class top-1 accuracies; GZSL adds the seen/unseen harmonic
mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateDataError

logger = logging.getLogger(__name__)


@dataclass
class PrototypeSet:
    """Latent prototype per class id (global class indexing)."""

    prototypes: dict  # class id -> np.ndarray of latent width

    def __getitem__(self, y: int) -> np.ndarray:
        return self.prototypes[y]

    def covers(self, classes) -> bool:
        return all(y in self.prototypes for y in classes)


@dataclass
class Metrics:
    setting: str
    acc: float | None = None
    acc_s: float | None = None
    acc_u: float | None = None
    h: float | None = None
    per_class: dict = field(default_factory=dict)
    excluded_classes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"setting": self.setting, "per_class": {str(k): v for k, v in self.per_class.items()}}
        for k in ("acc", "acc_s", "acc_u", "h"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        if self.excluded_classes:
            out["excluded_classes"] = list(self.excluded_classes)
        return out


def seen_prototypes(lat_features: np.ndarray, labels: np.ndarray) -> PrototypeSet:
    """Per-class arithmetic means of latent features."""
    labels = np.asarray(labels)
    protos = {}
    for y in np.unique(labels):
        rows = lat_features[labels == y]
        if rows.shape[0] == 0:
            raise DegenerateDataError(f"class {y} has no samples")
        protos[int(y)] = rows.mean(axis=0)
    return PrototypeSet(protos)


def unseen_prototypes_ridge(phi_seen: np.ndarray, phi_u: np.ndarray,
                            seen_protos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ridge combination of seen prototypes for one unseen class.

    Solves (Phi Phi^T + I) beta = Phi phi_u with Phi the S x m seen
    attribute matrix; returns (beta, prototype).
    """
    phi_seen = np.asarray(phi_seen, dtype=np.float64)
    s = phi_seen.shape[0]
    if s < 1:
        raise ContractError("need at least one seen class")
    gram = phi_seen @ phi_seen.T + np.eye(s)
    beta = np.linalg.solve(gram, phi_seen @ np.asarray(phi_u, dtype=np.float64))
    return beta, beta @ np.asarray(seen_protos, dtype=np.float64)


def build_prototype_set(lat_features: np.ndarray, labels: np.ndarray,
                        cam_values: np.ndarray, seen_ids, unseen_ids) -> PrototypeSet:
    """Seen prototypes from training features, unseen ones via ridge transfer."""
    seen_ids = list(seen_ids)
    protos = seen_prototypes(lat_features, labels)
    missing = [y for y in seen_ids if y not in protos.prototypes]
    if missing:
        raise DegenerateDataError(f"seen classes without samples: {missing}")
    phi_seen = cam_values[seen_ids]
    seen_matrix = np.stack([protos[y] for y in seen_ids])
    for yu in unseen_ids:
        _, proto = unseen_prototypes_ridge(phi_seen, cam_values[yu], seen_matrix)
        protos.prototypes[int(yu)] = proto
    return protos


def predict_czsl(phi_x: np.ndarray, cam_values: np.ndarray, space) -> np.ndarray:
    """Argmax of phi(x)^T phi(y) over `space`; ties go to the lowest class id."""
    space = np.asarray(sorted(space))
    if space.size == 0:
        raise ContractError("empty search space")
    scores = np.asarray(phi_x) @ cam_values[space].T
    return space[np.argmax(scores, axis=1)]


def predict_with_latent(phi_x: np.ndarray, lat_x: np.ndarray, protos: PrototypeSet,
                        cam_values: np.ndarray, space) -> np.ndarray:
    """Argmax of the attribute score plus the latent-prototype score."""
    space = np.asarray(sorted(space))
    if not protos.covers(space):
        raise ContractError("prototype set does not cover the search space")
    proto_matrix = np.stack([protos[int(y)] for y in space])
    scores = np.asarray(phi_x) @ cam_values[space].T + np.asarray(lat_x) @ proto_matrix.T
    return space[np.argmax(scores, axis=1)]


def per_class_top1(preds: np.ndarray, labels: np.ndarray, classes) -> tuple[dict, float, list]:
    """Mean over classes of within-class accuracy; empty classes are skipped."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    per_class, excluded = {}, []
    for y in classes:
        mask = labels == y
        if not mask.any():
            excluded.append(int(y))
            logger.warning("class %d has no test samples; excluded from per-class mean", y)
            continue
        per_class[int(y)] = float((preds[mask] == y).mean())
    if not per_class:
        raise ContractError("no test samples for any listed class")
    return per_class, float(np.mean(list(per_class.values()))), excluded


def czsl_metrics(preds: np.ndarray, labels: np.ndarray, unseen_ids) -> Metrics:
    per_class, acc, excluded = per_class_top1(preds, labels, unseen_ids)
    return Metrics(setting="czsl", acc=acc, per_class=per_class, excluded_classes=excluded)


def gzsl_metrics(preds: np.ndarray, labels: np.ndarray, seen_ids, unseen_ids) -> Metrics:
    """Seen/unseen per-class accuracies and their harmonic mean."""
    labels = np.asarray(labels)
    if not np.isin(labels, list(seen_ids)).any() or not np.isin(labels, list(unseen_ids)).any():
        raise ContractError("GZSL test set must contain both seen and unseen samples")
    pc_s, acc_s, exc_s = per_class_top1(preds, labels, seen_ids)
    pc_u, acc_u, exc_u = per_class_top1(preds, labels, unseen_ids)
    h = 0.0 if acc_s + acc_u == 0.0 else 2.0 * acc_s * acc_u / (acc_s + acc_u)
    return Metrics(setting="gzsl", acc_s=acc_s, acc_u=acc_u, h=h,
                   per_class={**pc_s, **pc_u}, excluded_classes=exc_s + exc_u)


def harmonic_mean(acc_s: float, acc_u: float) -> float:
    return 0.0 if acc_s + acc_u == 0.0 else 2.0 * acc_s * acc_u / (acc_s + acc_u)
