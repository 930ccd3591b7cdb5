"""Geometry of mixed real/angular phase spaces.

A point lives on R^a x T^b; which slots are angular is recorded once in a
CoordinateLayout and shared by every point, trajectory, and domain built on
it. Angles are canonically wrapped to (-pi, pi]. Distances combine the
Euclidean metric on real slots with shortest-arc length on angular slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import InvalidValue, LayoutMismatch

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap a single angle to the canonical interval (-pi, pi].

    Parameters
    ----------
    theta : float
        Angle in radians; must be finite.

    Returns
    -------
    float
        The representative of theta mod 2*pi lying in (-pi, pi].

    Examples
    --------
    >>> wrap_angle(3 * math.pi)
    3.141592653589793
    >>> wrap_angle(-math.pi)
    3.141592653589793
    """
    if not math.isfinite(theta):
        raise InvalidValue(f"cannot wrap non-finite angle {theta!r}")
    if -math.pi < theta <= math.pi:
        return theta  # already canonical; do not perturb the bits
    return math.pi - (math.pi - theta) % TWO_PI


def wrap_angles(values: np.ndarray, angle_mask: np.ndarray) -> np.ndarray:
    """Wrap the masked slots of an array of states; other slots pass through.

    Works on any shape (..., dim) with angle_mask of shape (dim,).
    """
    out = np.array(values, dtype=float, copy=True)
    if angle_mask.any():
        a = out[..., angle_mask]
        # leave in-range entries untouched so wrapping is bitwise
        # idempotent and storage never perturbs a canonical angle
        wrapped = np.pi - np.remainder(np.pi - a, TWO_PI)
        out[..., angle_mask] = np.where((a > -np.pi) & (a <= np.pi),
                                        a, wrapped)
    return out


@dataclass(frozen=True)
class CoordinateLayout:
    """Names the slots of a phase space and marks which ones are angles.

    Parameters
    ----------
    labels : tuple of str
        One label per slot, all distinct, ASCII.
    angle_slots : frozenset of int
        Indices of the angular slots.
    """

    labels: tuple[str, ...]
    angle_slots: frozenset[int]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise InvalidValue("layout labels must be distinct")
        for lab in self.labels:
            if not lab or not lab.isascii():
                raise InvalidValue(f"bad slot label {lab!r}")
        for s in self.angle_slots:
            if not 0 <= s < len(self.labels):
                raise InvalidValue(f"angle slot {s} out of range")

    @property
    def dim(self) -> int:
        return len(self.labels)

    def is_angle(self, slot: int) -> bool:
        return slot in self.angle_slots

    @cached_property
    def angle_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        mask[list(self.angle_slots)] = True
        mask.setflags(write=False)
        return mask

    def slot_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidValue(f"no slot labelled {label!r}") from None


@dataclass(frozen=True, eq=False)
class MixedPoint:
    """A single state: a layout plus one coordinate per slot.

    Construct through `MixedPoint.of`, which wraps angular slots and rejects
    non-finite input. coords is a read-only float array of shape (dim,).
    """

    layout: CoordinateLayout
    coords: np.ndarray

    @classmethod
    def of(cls, layout: CoordinateLayout, values) -> "MixedPoint":
        arr = np.asarray(values, dtype=float)
        if arr.shape != (layout.dim,):
            raise InvalidValue(
                f"expected {layout.dim} coordinates, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidValue("coordinates must be finite")
        arr = wrap_angles(arr, layout.angle_mask)
        arr.setflags(write=False)
        return cls(layout, arr)

    def __getitem__(self, slot) -> float:
        """Coordinate by index or by label."""
        if isinstance(slot, str):
            slot = self.layout.slot_of(slot)
        return float(self.coords[slot])

    def replace(self, slot, value: float) -> "MixedPoint":
        if isinstance(slot, str):
            slot = self.layout.slot_of(slot)
        c = self.coords.copy()
        c[slot] = value
        return MixedPoint.of(self.layout, c)

    def __repr__(self):
        inner = ", ".join(f"{lab}={v:.6g}"
                          for lab, v in zip(self.layout.labels, self.coords))
        return f"MixedPoint({inner})"


def check_same_layout(a: MixedPoint, b: MixedPoint) -> None:
    if a.layout.labels != b.layout.labels \
            or a.layout.angle_slots != b.layout.angle_slots:
        raise LayoutMismatch("points use different coordinate layouts")


def component_distances(layout: CoordinateLayout,
                        a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-slot distances |a - b|, shortest-arc on angular slots.

    a and b broadcast against each other; trailing axis is the slot axis.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    mask = layout.angle_mask
    if mask.any():
        ang = d[..., mask]
        d = np.array(d, copy=True)
        d[..., mask] = np.pi - np.remainder(np.pi - ang, TWO_PI)
    return np.abs(d)


def torus_distance_batch(layout: CoordinateLayout,
                         a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product-metric distance for stacked states; returns shape (...)."""
    d = component_distances(layout, a, b)
    return np.sqrt((d * d).sum(axis=-1))


def torus_distance(a: MixedPoint, b: MixedPoint) -> float:
    """Distance on R^a x T^b: root-sum-square of per-slot distances.

    Angular slots contribute shortest-arc length, real slots |a_i - b_i|.
    Symmetric, zero iff the points coincide, and satisfies the triangle
    inequality (product of metrics).
    """
    check_same_layout(a, b)
    return float(torus_distance_batch(a.layout, a.coords, b.coords))


Interval = tuple[float, float]


@dataclass(frozen=True)
class ModularDomain:
    """A per-slot box, open in every constrained slot.

    intervals has one entry per slot: either None (unconstrained) or an open
    interval (lo, hi). On angular slots the interval is read modulo 2*pi and
    must have width <= 2*pi.
    """

    intervals: tuple[Optional[Interval], ...]

    def __post_init__(self):
        for iv in self.intervals:
            if iv is None:
                continue
            lo, hi = iv
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise InvalidValue(f"bad interval {iv!r}")

    @property
    def dim(self) -> int:
        return len(self.intervals)


def in_modular_domain(p: MixedPoint, domain: ModularDomain) -> bool:
    """Membership test; angular slots are compared modulo 2*pi.

    Adding 2*pi*k to any angular slot of the input leaves the verdict
    unchanged. Raises LayoutMismatch if dimensions disagree and InvalidValue
    if an angular interval is wider than 2*pi.
    """
    if domain.dim != p.layout.dim:
        raise LayoutMismatch(
            f"domain has {domain.dim} slots, point has {p.layout.dim}")
    for slot, iv in enumerate(domain.intervals):
        if iv is None:
            continue
        lo, hi = iv
        v = p.coords[slot]
        if p.layout.is_angle(slot):
            width = hi - lo
            if width > TWO_PI + 1e-15:
                raise InvalidValue(
                    f"angular interval wider than 2*pi on slot {slot}")
            if not 0.0 < (v - lo) % TWO_PI < width:
                return False
        else:
            if not lo < v < hi:
                return False
    return True


def subdomain_of(inner: ModularDomain, outer: ModularDomain,
                 layout: CoordinateLayout) -> bool:
    """True if every point admitted by `inner` is admitted by `outer`."""
    if inner.dim != outer.dim or inner.dim != layout.dim:
        raise LayoutMismatch("domain/layout dimensions disagree")
    for slot in range(layout.dim):
        out_iv = outer.intervals[slot]
        if out_iv is None:
            continue
        in_iv = inner.intervals[slot]
        o_lo, o_hi = out_iv
        if in_iv is None:
            # unconstrained slot: full circle (angular) or full line
            if not layout.is_angle(slot):
                return False
            if o_hi - o_lo < TWO_PI - 1e-15:
                return False
            continue
        i_lo, i_hi = in_iv
        if layout.is_angle(slot):
            shift = (i_lo - o_lo) % TWO_PI
            if shift + (i_hi - i_lo) > (o_hi - o_lo) + 1e-12:
                return False
        else:
            if i_lo < o_lo - 1e-12 or i_hi > o_hi + 1e-12:
                return False
    return True
