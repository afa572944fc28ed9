"""Vector fields of the control-based Lagrangian flows.

Four dynamics are covered:

* PDGD  ``x' = -grad f - grad h z``, ``z' = h``
* PI    ``x' = -grad f - grad h (k_p h + k_i z)``, ``z' = h``
* ALM   PI with ``k_p = w`` (penalty weight) and ``k_i = 1``
* FL    ``x' = -grad f - grad h lam(x)`` with ``lam`` chosen so that the
  constraint output obeys ``y' = G(y)``; the shipped family is ``G(y) = -k y``.

PDGD and ALM are stored canonically as PI specs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import GramFactor, gram
from .problem import Problem

__all__ = [
    "FlowSpec",
    "FlowState",
    "pdgd_rhs",
    "pi_rhs",
    "pi_multiplier",
    "pi_lambda_rhs",
    "fl_multiplier",
    "fl_rhs",
    "sigma_gd_rhs",
    "flow_multiplier",
    "vector_field",
]

KINDS = ("PDGD", "PI", "FL", "ALM")


@dataclass(frozen=True)
class FlowSpec:
    """Which dynamics to run and its gains.

    Use the constructors :meth:`pdgd`, :meth:`pi`, :meth:`alm` and :meth:`fl`.
    ``output_map`` replaces the linear output dynamics ``G(y) = -k y`` of FL;
    it must make ``y' = G(y)`` globally exponentially stable.
    """

    kind: str
    k_p: float = 0.0
    k_i: float = 1.0
    k: float | None = None
    w: float | None = None
    output_map: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.kind == "FL":
            if self.k is None or not self.k > 0:
                raise ValueError("FL needs an output gain k > 0")
        else:
            if not self.k_i > 0:
                raise ValueError("integral gain k_i must be > 0")
            if self.k_p < 0:
                raise ValueError("proportional gain k_p must be >= 0")
        if self.kind == "PDGD" and (self.k_p != 0.0 or self.k_i != 1.0):
            raise ValueError("PDGD is PI with k_p = 0, k_i = 1")
        if self.kind == "ALM" and (self.w is None or self.k_p != self.w or self.k_i != 1.0):
            raise ValueError("ALM is PI with k_p = w, k_i = 1")

    @classmethod
    def pdgd(cls) -> FlowSpec:
        return cls("PDGD", k_p=0.0, k_i=1.0)

    @classmethod
    def pi(cls, k_p: float, k_i: float = 1.0) -> FlowSpec:
        return cls("PI", k_p=float(k_p), k_i=float(k_i))

    @classmethod
    def alm(cls, w: float) -> FlowSpec:
        if not w > 0:
            raise ValueError("ALM penalty w must be > 0")
        return cls("ALM", k_p=float(w), k_i=1.0, w=float(w))

    @classmethod
    def fl(cls, k: float, output_map=None) -> FlowSpec:
        return cls("FL", k_p=0.0, k_i=1.0, k=float(k), output_map=output_map)

    @property
    def pi_family(self) -> bool:
        return self.kind != "FL"

    @property
    def label(self) -> str:
        if self.kind == "FL":
            return f"FL(k={self.k:g})"
        if self.kind == "PDGD":
            return "PDGD"
        if self.kind == "ALM":
            return f"ALM(w={self.w:g})"
        return f"PI(k_p={self.k_p:g},k_i={self.k_i:g})"


@dataclass(frozen=True)
class FlowState:
    """Primal state ``x`` and, for the PI family, integral state ``z``."""

    x: np.ndarray
    z: np.ndarray | None = None

    def pack(self) -> np.ndarray:
        return self.x if self.z is None else np.concatenate([self.x, self.z])

    @classmethod
    def unpack(cls, y: np.ndarray, n: int, with_z: bool) -> FlowState:
        return cls(y[:n], y[n:] if with_z else None)


def _eval(p: Problem, x):
    g = np.asarray(p.grad_f(x), dtype=float)
    hx = np.atleast_1d(np.asarray(p.h(x), dtype=float))
    J = np.asarray(p.jac_h(x), dtype=float).reshape(p.m, p.n)
    return g, hx, J


def pdgd_rhs(p: Problem, s: FlowState) -> FlowState:
    """Primal-dual gradient field, coded directly."""
    g, hx, J = _eval(p, s.x)
    return FlowState(-g - J.T @ s.z, hx)


def pi_multiplier(p: Problem, x, z, k_p: float, k_i: float) -> np.ndarray:
    """Multiplier acting on the primal dynamics: ``k_p h(x) + k_i z``."""
    return k_p * np.atleast_1d(np.asarray(p.h(x), dtype=float)) + k_i * np.asarray(z, dtype=float)


def pi_rhs(p: Problem, s: FlowState, k_p: float, k_i: float) -> FlowState:
    """Proportional-integral field; ``k_p = 0, k_i = 1`` is PDGD."""
    g, hx, J = _eval(p, s.x)
    return FlowState(-g - J.T @ (k_p * hx + k_i * s.z), hx)


def pi_lambda_rhs(p: Problem, x, lam, k_p: float, k_i: float) -> tuple[np.ndarray, np.ndarray]:
    """PI dynamics in multiplier form, ``lam = k_p h + k_i z``.

    ``lam' = -k_p (H lam + J grad f - k h)`` with ``k = k_i / k_p``.
    """
    g, hx, J = _eval(p, x)
    lam = np.asarray(lam, dtype=float)
    k = k_i / k_p
    return -g - J.T @ lam, -k_p * (J @ J.T @ lam + J @ g - k * hx)


def _output_target(hx: np.ndarray, k: float, output_map) -> np.ndarray:
    return -k * hx if output_map is None else np.asarray(output_map(hx), dtype=float)


def fl_multiplier(p: Problem, x, k: float, output_map=None, factor: GramFactor | None = None) -> np.ndarray:
    """Feedback-linearizing multiplier.

    Solves ``H lam = -J grad f - G(h)`` so that ``d/dt h(x) = G(h(x))``;
    with the linear choice ``G(y) = -k y`` this is
    ``lam = phi(x) + k H^{-1} h(x)``. Equivalently the unique minimizer of
    ``||H sigma - b||^2`` with ``b = -J grad f - G(h)``.
    """
    x = np.asarray(x, dtype=float)
    G = factor or gram(p, x)
    g = np.asarray(p.grad_f(x), dtype=float)
    hx = np.atleast_1d(np.asarray(p.h(x), dtype=float))
    return G.solve(-G.J @ g - _output_target(hx, k, output_map))


def fl_rhs(p: Problem, x, k: float, output_map=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    G = gram(p, x)
    lam = fl_multiplier(p, x, k, output_map, factor=G)
    return -np.asarray(p.grad_f(x), dtype=float) - G.J.T @ lam


def sigma_gd_rhs(p: Problem, x, sigma, alpha: float, k: float) -> np.ndarray:
    """Multiplier-tracking gradient flow ``sigma' = -alpha (H sigma - b(x))``.

    ``b(x) = -J grad f + k h`` is the right-hand side whose least-squares
    solution is the FL multiplier; with ``alpha = k_p`` and ``k = k_i / k_p``
    this is the multiplier line of :func:`pi_lambda_rhs`.
    """
    if not (alpha > 0 and k > 0):
        raise ValueError("alpha and k must be positive")
    g, hx, J = _eval(p, x)
    return -alpha * (J @ J.T @ np.asarray(sigma, dtype=float) + J @ g - k * hx)


def flow_multiplier(p: Problem, spec: FlowSpec, x, z=None) -> np.ndarray:
    """The multiplier that currently drives the primal dynamics."""
    if spec.kind == "FL":
        return fl_multiplier(p, x, spec.k, spec.output_map)
    return pi_multiplier(p, x, z, spec.k_p, spec.k_i)


def vector_field(p: Problem, spec: FlowSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Autonomous field on the packed state ``[x, z]`` (``x`` alone for FL)."""
    n = p.n
    if spec.kind == "FL":
        k, G = spec.k, spec.output_map

        def fl_field(y):
            return fl_rhs(p, y, k, G)

        return fl_field

    k_p, k_i = spec.k_p, spec.k_i

    def pi_field(y):
        x, z = y[:n], y[n:]
        g, hx, J = _eval(p, x)
        return np.concatenate([-g - J.T @ (k_p * hx + k_i * z), hx])

    return pi_field
