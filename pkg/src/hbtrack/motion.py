"""Constant-velocity Kalman filter in ``(cx, cy, aspect, height)`` space.

Noise standard deviations scale with the box height, so the filter behaves
the same for a 20 px head and a 2000 px body.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox

__all__ = ["MotionState", "ConstantVelocity", "initiate", "predict", "update"]

_NDIM = 4


@dataclass(frozen=True, eq=False)
class MotionState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(2 * _NDIM)
        cov = np.array(self.covariance, dtype=float).reshape(2 * _NDIM, 2 * _NDIM)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def box(self, score: float = 1.0) -> BBox:
        cx, cy, a, h = self.mean[:4]
        return BBox.from_xyah(cx, cy, max(a, 1e-6), max(h, 1e-6), score)

    def is_valid(self, tol: float = 1e-9) -> bool:
        cov = self.covariance
        if self.mean[3] <= 0 or not np.allclose(cov, cov.T, atol=tol):
            return False
        return bool(np.linalg.eigvalsh((cov + cov.T) / 2).min() >= -tol * max(1.0, np.abs(cov).max()))

    def translated(self, delta: np.ndarray) -> "MotionState":
        return MotionState(self.mean + delta, self.covariance)


def _xyah(box: BBox) -> np.ndarray:
    cx, cy = box.center
    return np.array([cx, cy, box.w / box.h, box.h])


@dataclass(frozen=True)
class ConstantVelocity:
    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160
    aspect_std: float = 1e-2
    aspect_velocity_std: float = 1e-5
    measurement_aspect_std: float = 1e-1

    @property
    def transition(self) -> np.ndarray:
        f = np.eye(2 * _NDIM)
        f[:_NDIM, _NDIM:] = np.eye(_NDIM)
        return f

    def initiate(self, box: BBox) -> MotionState:
        z = _xyah(box)
        h = z[3]
        sp, sv = self.std_weight_position, self.std_weight_velocity
        std = np.array([
            2 * sp * h, 2 * sp * h, self.aspect_std, 2 * sp * h,
            10 * sv * h, 10 * sv * h, self.aspect_velocity_std, 10 * sv * h,
        ])
        mean = np.concatenate([z, np.zeros(_NDIM)])
        return MotionState(mean, np.diag(std ** 2))

    def predict(self, state: MotionState) -> MotionState:
        h = state.mean[3]
        sp, sv = self.std_weight_position, self.std_weight_velocity
        std = np.array([
            sp * h, sp * h, self.aspect_std, sp * h,
            sv * h, sv * h, self.aspect_velocity_std, sv * h,
        ])
        f = self.transition
        mean = f @ state.mean
        cov = f @ state.covariance @ f.T + np.diag(std ** 2)
        return MotionState(mean, (cov + cov.T) / 2)

    def update(self, state: MotionState, box: BBox) -> MotionState:
        h = state.mean[3]
        sp = self.std_weight_position
        r = np.diag(np.array([sp * h, sp * h, self.measurement_aspect_std, sp * h]) ** 2)
        hm = np.eye(_NDIM, 2 * _NDIM)
        p = state.covariance
        s = hm @ p @ hm.T + r
        gain = np.linalg.solve(s, hm @ p).T
        innovation = _xyah(box) - hm @ state.mean
        mean = state.mean + gain @ innovation
        # Joseph form keeps the covariance symmetric PSD
        ikh = np.eye(2 * _NDIM) - gain @ hm
        cov = ikh @ p @ ikh.T + gain @ r @ gain.T
        return MotionState(mean, (cov + cov.T) / 2)


_DEFAULT = ConstantVelocity()


def initiate(box: BBox) -> MotionState:
    return _DEFAULT.initiate(box)


def predict(state: MotionState) -> MotionState:
    return _DEFAULT.predict(state)


def update(state: MotionState, box: BBox) -> MotionState:
    return _DEFAULT.update(state, box)
