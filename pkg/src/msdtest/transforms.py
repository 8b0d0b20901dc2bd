"""Preprocessing for data with one-sided or vanishing-density supports.

* :func:`apply_map` pushes each coordinate through a strictly increasing
  map ``f(a * t + b)`` (exponential, shifted ReLU, softplus, logistic or
  arctangent).
* :func:`symmetrize` reflects a nonnegative sample through every sign
  pattern, producing a sign-symmetric weighted measure.
* :func:`mix_background` replaces a fraction ``eta`` of the observations
  with draws from a background law (default: uniform on the inflated
  bounding box).
"""

from __future__ import annotations

import itertools
import math
import re
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, ParameterError
from .transport import DiscreteMeasure

_FAMILIES: dict[str, Callable[[np.ndarray, float, float], np.ndarray]] = {
    "exp": lambda t, a, b: np.exp(a * t + b),
    "relu": lambda t, a, b: np.maximum(a * t + b, 0.0),
    # a^{-1} log(1 + exp(a t + b)), written stably.
    "softplus": lambda t, a, b: np.logaddexp(0.0, a * t + b) / a,
    "logistic": lambda t, a, b: 1.0 / (1.0 + np.exp(-(a * t + b))),
    "arctan": lambda t, a, b: np.arctan(a * t + b) / math.pi + 1.0,
}
_ALIASES = {
    "exponential": "exp",
    "shifted-relu": "relu",
    "arctangent": "arctan",
    "sigmoid": "logistic",
}


@dataclass(frozen=True)
class CoordinateMap:
    family: str
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        fam = _ALIASES.get(self.family, self.family)
        if fam not in _FAMILIES:
            raise ParameterError(f"unknown map family {self.family!r}")
        if not self.a > 0:
            raise ParameterError(f"slope a must be positive, got {self.a}")
        object.__setattr__(self, "family", fam)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return _FAMILIES[self.family](np.asarray(t, dtype=float), self.a, self.b)


@dataclass(frozen=True)
class MonotoneMap:
    """One :class:`CoordinateMap` per coordinate (a single map is broadcast)."""

    maps: tuple[CoordinateMap, ...]

    @classmethod
    def parse(cls, text: str) -> MonotoneMap:
        """Parse ``"softplus(a=1,b=0)"`` or ``"exp;relu(b=1)"`` (one per coordinate)."""
        maps = []
        for part in text.split(";"):
            m = re.fullmatch(r"\s*([a-z\-]+)\s*(?:\((.*)\))?\s*", part)
            if not m:
                raise ParameterError(f"cannot parse map {part!r}")
            kwargs = {}
            if m.group(2) and m.group(2).strip():
                for item in m.group(2).split(","):
                    key, sep, val = item.partition("=")
                    if not sep or key.strip() not in ("a", "b"):
                        raise ParameterError(f"bad map argument {item!r}")
                    try:
                        kwargs[key.strip()] = float(val)
                    except ValueError as exc:
                        raise ParameterError(f"bad map argument {item!r}") from exc
            maps.append(CoordinateMap(m.group(1), **kwargs))
        return cls(tuple(maps))


def apply_map(mapping: MonotoneMap, sample) -> np.ndarray:
    """Apply the coordinatewise maps; a single map is used for every coordinate."""
    x = np.asarray(sample, dtype=float)
    if x.ndim != 2:
        raise DimensionError("sample must be an N x d matrix")
    maps = mapping.maps
    if len(maps) == 1:
        maps = maps * x.shape[1]
    if len(maps) != x.shape[1]:
        raise DimensionError(f"{len(maps)} maps for {x.shape[1]} coordinates")
    out = np.column_stack([m(x[:, k]) for k, m in enumerate(maps)])
    for k, m in enumerate(maps):
        if m.family == "relu" and np.all(out[:, k] == 0):
            warnings.warn(f"coordinate {k} is identically zero after the ReLU map", stacklevel=2)
    return out


def symmetrize(sample, seed: int | None = 0, exact_max_dim: int = 4) -> DiscreteMeasure:
    """Sign-symmetric version of a nonnegative sample.

    For ``d <= exact_max_dim`` every observation is replicated under all
    ``2^d`` sign patterns with weight ``1 / (2^d N)``.  Above that, each
    observation receives one uniformly random sign pattern drawn from
    ``seed`` and weight ``1 / N``.
    """
    x = np.asarray(sample, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if np.any(x < 0):
        raise ParameterError("symmetrize expects nonnegative data")
    n, d = x.shape
    if d <= exact_max_dim:
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=d)))
        pts = (x[:, None, :] * signs[None, :, :]).reshape(n * len(signs), d)
        return DiscreteMeasure(pts, np.full(len(pts), 1.0 / len(pts)))
    rng = np.random.default_rng(seed)
    signs = rng.choice((-1.0, 1.0), size=(n, d))
    return DiscreteMeasure(x * signs, np.full(n, 1.0 / n))


def uniform_box_background(sample, inflate: float = 0.1):
    """Sampler ``(n, rng) -> draws`` uniform on the inflated bounding box."""
    x = np.asarray(sample, dtype=float)
    lo, hi = x.min(axis=0), x.max(axis=0)
    pad = inflate * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(lo, hi, size=(n, len(lo)))

    return draw


@dataclass(frozen=True)
class MixtureSpec:
    eta: float
    background: Callable | None = None

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")


def replaced_count(eta: float, n: int) -> int:
    # ceil(eta * n) with a guard against 0.1 * 1000 = 100.00000000000001.
    return min(n, math.ceil(eta * n - 1e-9))


def mix_background(sample, spec: MixtureSpec, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Replace ``ceil(eta N)`` random observations with background draws.

    Returns the mixed sample and the sorted replaced indices.
    """
    x = np.array(sample, dtype=float)
    if x.ndim != 2:
        raise DimensionError("sample must be an N x d matrix")
    n = len(x)
    k = replaced_count(spec.eta, n)
    if k == 0:
        return x, np.array([], dtype=int)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    draw = spec.background or uniform_box_background(x)
    bg = np.asarray(draw(k, rng), dtype=float)
    if bg.shape != (k, x.shape[1]):
        raise DimensionError("background sampler returned the wrong shape")
    x[idx] = bg
    return x, idx
