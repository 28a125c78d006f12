"""Associative embedding loss for joint head-body detectors.

The loss pulls embeddings of the same pedestrian together and pushes those of
different pedestrians apart by at least a margin ``delta``.  It has three parts
per term: body-body, head-head and body-head.  Same-part pulls are weighted by
``exp(d_ij)`` where ``d_ij`` is a (normalized) box distance.

Everything here is plain numpy.  Embeddings are ``(M, D)`` / ``(N, D)`` arrays;
the gradient returned by :func:`aml_gradient` has the same layout, so an
external training loop can feed it straight into backprop.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "LossBatch",
    "LossWeights",
    "pull_loss",
    "push_loss",
    "aml_loss",
    "aml_gradient",
    "loss_terms",
    "GradientCheck",
    "check_gradient",
    "random_batch",
]


@dataclass(frozen=True, eq=False)
class LossBatch:
    body_embeddings: np.ndarray
    head_embeddings: np.ndarray
    body_identity: np.ndarray
    head_identity: np.ndarray
    body_box_distances: np.ndarray
    head_box_distances: np.ndarray

    def __post_init__(self):
        body = _as_embeddings(self.body_embeddings, "body_embeddings")
        head = _as_embeddings(self.head_embeddings, "head_embeddings")
        if body.shape[1] and head.shape[1] and body.shape[1] != head.shape[1]:
            raise ValueError(
                f"embedding dimension mismatch: body {body.shape[1]} vs head {head.shape[1]}")
        dim = max(body.shape[1], head.shape[1])
        if len(body) == 0:
            body = body.reshape(0, dim)
        if len(head) == 0:
            head = head.reshape(0, dim)
        if dim < 1 and (len(body) or len(head)):
            raise ValueError("embedding dimension must be at least 1")
        bid = np.asarray(self.body_identity).reshape(-1)
        hid = np.asarray(self.head_identity).reshape(-1)
        if len(bid) != len(body) or len(hid) != len(head):
            raise ValueError("one identity label is required per embedding")
        dbb = _as_distances(self.body_box_distances, len(body), "body_box_distances")
        dhh = _as_distances(self.head_box_distances, len(head), "head_box_distances")
        for name, value in (("body_embeddings", body), ("head_embeddings", head),
                            ("body_identity", bid), ("head_identity", hid),
                            ("body_box_distances", dbb), ("head_box_distances", dhh)):
            object.__setattr__(self, name, value)

    @property
    def dim(self) -> int:
        return self.body_embeddings.shape[1]

    def with_embeddings(self, body: np.ndarray, head: np.ndarray) -> "LossBatch":
        return LossBatch(body, head, self.body_identity, self.head_identity,
                         self.body_box_distances, self.head_box_distances)

    def to_dict(self) -> dict:
        return {
            "body_embeddings": self.body_embeddings.tolist(),
            "head_embeddings": self.head_embeddings.tolist(),
            "body_identity": self.body_identity.tolist(),
            "head_identity": self.head_identity.tolist(),
            "body_box_distances": self.body_box_distances.tolist(),
            "head_box_distances": self.head_box_distances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LossBatch":
        return cls(**{k: np.asarray(data[k], dtype=float if "identity" not in k else None)
                      for k in ("body_embeddings", "head_embeddings", "body_identity",
                                "head_identity", "body_box_distances", "head_box_distances")})


@dataclass(frozen=True)
class LossWeights:
    """Loss weighting.

    ``restrict_pairs`` selects the identity-aware sums: pulls only act on
    same-identity pairs and pushes only on different-identity pairs.  Setting
    it to False sums every pair in both terms, exactly as the formulas are
    printed.
    """
    mu: float = 1.0
    beta: float = 1.5
    delta: float = 2.0
    sigma: float = 1.0
    tau: float = 1.0
    restrict_pairs: bool = True

    def __post_init__(self):
        for name in ("mu", "beta", "sigma", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.delta > 0:
            raise ValueError("delta must be positive")


def _as_embeddings(x, name) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _as_distances(x, n, name) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.size == 0 and n == 0:
        return np.zeros((0, 0))
    if arr.shape != (n, n):
        raise ValueError(f"{name} must have shape ({n}, {n}), got {arr.shape}")
    if np.any(arr < 0) or not np.allclose(arr, arr.T) or np.any(np.diag(arr) != 0):
        raise ValueError(f"{name} must be symmetric, non-negative, zero on the diagonal")
    return arr


def _pair_masks(weights: LossWeights, ids_a, ids_b, same_set: bool):
    same = ids_a[:, None] == ids_b[None, :]
    offdiag = ~np.eye(len(ids_a), dtype=bool) if same_set else np.ones_like(same)
    if weights.restrict_pairs:
        return same & offdiag, ~same & offdiag
    return offdiag, offdiag


def _pair_geometry(a: np.ndarray, b: np.ndarray):
    diff = a[:, None, :] - b[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return diff, sq


def loss_terms(batch: LossBatch, weights: LossWeights = LossWeights()) -> dict[str, float]:
    """All six partial terms, handy for reporting."""
    values, _ = _evaluate(batch, weights, need_grad=False)
    return values


def _evaluate(batch: LossBatch, weights: LossWeights, need_grad: bool):
    eb, eh = batch.body_embeddings, batch.head_embeddings
    m, n = len(eb), len(eh)
    grad_b = np.zeros_like(eb)
    grad_h = np.zeros_like(eh)
    values = {}

    blocks = (
        ("bb", eb, eb, batch.body_identity, batch.body_identity, m * m, np.exp(batch.body_box_distances), True),
        ("hh", eh, eh, batch.head_identity, batch.head_identity, n * n, np.exp(batch.head_box_distances), True),
        ("bh", eb, eh, batch.body_identity, batch.head_identity, m * n, None, False),
    )
    for key, a, b, ia, ib, norm, pull_w, same_set in blocks:
        if norm == 0:
            values[f"pull_{key}"] = 0.0
            values[f"push_{key}"] = 0.0
            continue
        pull_mask, push_mask = _pair_masks(weights, ia, ib, same_set)
        diff, sq = _pair_geometry(a, b)

        w = pull_mask.astype(float)
        if pull_w is not None:
            w = w * pull_w
        values[f"pull_{key}"] = float(np.sum(w * sq) / norm)

        dist = np.sqrt(sq)
        hinge = np.where(push_mask, np.maximum(0.0, weights.delta - dist), 0.0)
        values[f"push_{key}"] = float(np.sum(hinge * hinge) / norm)

        if not need_grad:
            continue
        part = weights.mu if same_set else weights.beta
        # d/da of w*|a-b|^2 is 2w(a-b); of hinge^2 is -2*hinge*(a-b)/|a-b|
        with np.errstate(divide="ignore", invalid="ignore"):
            push_coef = np.where(dist > 0, -2.0 * hinge / dist, 0.0)
        coef = part * (weights.sigma * 2.0 * w + weights.tau * push_coef) / norm
        g = coef[:, :, None] * diff
        ga = g.sum(axis=1)
        gb = -g.sum(axis=0)
        if key == "bb":
            grad_b += ga + gb
        elif key == "hh":
            grad_h += ga + gb
        else:
            grad_b += ga
            grad_h += gb

    values["pull"] = weights.mu * (values["pull_bb"] + values["pull_hh"]) + weights.beta * values["pull_bh"]
    values["push"] = weights.mu * (values["push_bb"] + values["push_hh"]) + weights.beta * values["push_bh"]
    values["aml"] = weights.sigma * values["pull"] + weights.tau * values["push"]
    return values, (grad_b, grad_h)


def pull_loss(batch: LossBatch, weights: LossWeights = LossWeights()) -> float:
    return loss_terms(batch, weights)["pull"]


def push_loss(batch: LossBatch, weights: LossWeights = LossWeights()) -> float:
    return loss_terms(batch, weights)["push"]


def aml_loss(batch: LossBatch, weights: LossWeights = LossWeights()) -> float:
    return loss_terms(batch, weights)["aml"]


def aml_gradient(batch: LossBatch, weights: LossWeights = LossWeights()) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the combined loss w.r.t. body and head embeddings.

    Hinges use the zero subgradient at the margin.  Coincident embeddings in a
    push pair also get zero, the norm having no defined direction there.
    """
    _, grads = _evaluate(batch, weights, need_grad=True)
    return grads


@dataclass(frozen=True)
class GradientCheck:
    """Outcome of comparing :func:`aml_gradient` with central differences."""
    checked: int
    excluded: int
    max_abs_error: float
    max_rel_error: float
    passed: bool

    def to_dict(self) -> dict:
        return {"checked": self.checked, "excluded": self.excluded,
                "max_abs_error": self.max_abs_error, "max_rel_error": self.max_rel_error,
                "passed": self.passed}


def _near_hinge(batch: LossBatch, weights: LossWeights, tol: float):
    """Masks of body/head rows that sit in a push pair with distance within ``tol`` of a kink."""
    eb, eh = batch.body_embeddings, batch.head_embeddings
    near_b = np.zeros(len(eb), dtype=bool)
    near_h = np.zeros(len(eh), dtype=bool)
    blocks = ((eb, eb, batch.body_identity, batch.body_identity, True, near_b, near_b),
              (eh, eh, batch.head_identity, batch.head_identity, True, near_h, near_h),
              (eb, eh, batch.body_identity, batch.head_identity, False, near_b, near_h))
    for a, b, ia, ib, same_set, out_a, out_b in blocks:
        if not len(a) or not len(b):
            continue
        _, push_mask = _pair_masks(weights, ia, ib, same_set)
        dist = np.sqrt(_pair_geometry(a, b)[1])
        kink = push_mask & ((np.abs(dist - weights.delta) < tol) | (dist < tol))
        out_a |= kink.any(axis=1)
        out_b |= kink.any(axis=0)
    return near_b, near_h


def check_gradient(batch: LossBatch, weights: LossWeights = LossWeights(), step: float = 1e-5,
                   rtol: float = 1e-4, atol: float = 0.0, hinge_tol: float = 1e-6) -> GradientCheck:
    """Central-difference check of every gradient component.

    A component passes when ``|analytic - numeric| <= atol + rtol * |numeric|``.
    Rows of embeddings that take part in a push pair within ``hinge_tol`` of
    the margin (or of zero distance) are skipped, the loss not being smooth
    there.
    """
    grad_b, grad_h = aml_gradient(batch, weights)
    near_b, near_h = _near_hinge(batch, weights, hinge_tol)
    checked = excluded = 0
    max_abs = max_rel = 0.0
    ok = True
    for which, grad, near in (("body", grad_b, near_b), ("head", grad_h, near_h)):
        base = batch.body_embeddings if which == "body" else batch.head_embeddings
        for i in range(base.shape[0]):
            if near[i]:
                excluded += base.shape[1]
                continue
            for k in range(base.shape[1]):
                vals = []
                for sign in (1.0, -1.0):
                    moved = base.copy()
                    moved[i, k] += sign * step
                    if which == "body":
                        b2 = batch.with_embeddings(moved, batch.head_embeddings)
                    else:
                        b2 = batch.with_embeddings(batch.body_embeddings, moved)
                    vals.append(aml_loss(b2, weights))
                numeric = (vals[0] - vals[1]) / (2.0 * step)
                err = abs(grad[i, k] - numeric)
                checked += 1
                max_abs = max(max_abs, err)
                if numeric != 0:
                    max_rel = max(max_rel, err / abs(numeric))
                if err > atol + rtol * abs(numeric):
                    ok = False
    return GradientCheck(checked, excluded, max_abs, max_rel, ok)


def random_batch(rng: np.random.Generator, max_parts: int = 8, max_dim: int = 16,
                 max_identities: Optional[int] = None, spread: float = 1.0) -> LossBatch:
    """Random batch with ``1..max_parts`` bodies and heads and shared identity labels.

    Embeddings are Gaussian with standard deviation ``spread``; box distances
    are symmetric with a zero diagonal, drawn from ``U(0, 1)``.
    """
    m = int(rng.integers(1, max_parts + 1))
    n = int(rng.integers(1, max_parts + 1))
    dim = int(rng.integers(1, max_dim + 1))
    k = max_identities or max(m, n)
    ids_b = rng.integers(0, k, size=m)
    ids_h = rng.integers(0, k, size=n)

    def dists(size):
        d = np.triu(rng.uniform(0.0, 1.0, size=(size, size)), 1)
        return d + d.T

    return LossBatch(rng.normal(0.0, spread, size=(m, dim)), rng.normal(0.0, spread, size=(n, dim)),
                     ids_b, ids_h, dists(m), dists(n))
