"""Spherical sampling grids with quadrature weights summing to 4*pi."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .ambisonics import Direction

__all__ = [
    "SphereGrid",
    "t_design",
    "lebedev_26",
    "gauss_legendre_grid",
    "octahedral_rotations",
]

# McLaren's improved snub cube: orbit of this point under the rotation group
# of the cube is a spherical 7-design with 24 points.
_SNUB_CUBE_POINT = (0.8662468181078204, 0.4225186537611117, 0.2666354015167047)


@dataclass(frozen=True)
class SphereGrid:
    xyz: np.ndarray  # [N, 3] unit vectors
    weights: np.ndarray  # [N]
    degree: int  # polynomial degree integrated exactly

    @property
    def elevation(self) -> np.ndarray:
        return np.arcsin(np.clip(self.xyz[:, 2], -1.0, 1.0))

    @property
    def azimuth(self) -> np.ndarray:
        return np.mod(np.arctan2(self.xyz[:, 1], self.xyz[:, 0]), 2 * np.pi)

    def directions(self) -> list[Direction]:
        return [Direction(float(e), float(a)) for e, a in zip(self.elevation, self.azimuth)]

    def __len__(self) -> int:
        return len(self.weights)


def octahedral_rotations() -> np.ndarray:
    """The 24 proper rotations mapping the cube onto itself, as signed permutation matrices."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            m[range(3), perm] = signs
            if np.linalg.det(m) > 0:
                mats.append(m)
    return np.array(mats)


def _equal_weights(xyz: np.ndarray, degree: int) -> SphereGrid:
    xyz = np.asarray(xyz, dtype=float)
    xyz = xyz / np.linalg.norm(xyz, axis=1, keepdims=True)
    return SphereGrid(xyz, np.full(len(xyz), 4 * np.pi / len(xyz)), degree)


def t_design(n_points: int) -> SphereGrid:
    """Built-in equal-weight designs: 6 points (t=3), 12 (t=5), 24 (t=7)."""
    if n_points == 6:
        xyz = np.vstack([np.eye(3), -np.eye(3)])
        return _equal_weights(xyz, 3)
    if n_points == 12:
        g = (1 + math.sqrt(5)) / 2
        xyz = []
        for a, b in itertools.product((1.0, -1.0), (g, -g)):
            xyz += [(0, a, b), (a, b, 0), (b, 0, a)]
        return _equal_weights(np.array(xyz), 5)
    if n_points == 24:
        xyz = octahedral_rotations() @ np.array(_SNUB_CUBE_POINT)
        return _equal_weights(xyz, 7)
    raise ValueError(f"no built-in t-design with {n_points} points (have 6, 12, 24)")


def lebedev_26() -> SphereGrid:
    """26-point Lebedev rule, exact to degree 7."""
    axes = np.vstack([np.eye(3), -np.eye(3)])
    edges = np.array(
        [v for v in itertools.product((-1.0, 0.0, 1.0), repeat=3) if sum(map(abs, v)) == 2]
    ) / math.sqrt(2)
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=3))) / math.sqrt(3)
    xyz = np.vstack([axes, edges, corners])
    w = np.concatenate([np.full(6, 1 / 21), np.full(12, 4 / 105), np.full(8, 9 / 280)])
    return SphereGrid(xyz, 4 * np.pi * w, 7)


def gauss_legendre_grid(order: int) -> SphereGrid:
    """Product grid: Gauss-Legendre in sin(elevation) x uniform azimuth, exact to degree 2*order+1."""
    nodes, gl_w = np.polynomial.legendre.leggauss(order + 1)
    n_az = 2 * order + 2
    az = 2 * np.pi * np.arange(n_az) / n_az
    el = np.arcsin(nodes)
    E, A = np.meshgrid(el, az, indexing="ij")
    xyz = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    w = (gl_w[:, None] * np.full(n_az, 2 * np.pi / n_az)[None, :]).reshape(-1)
    return SphereGrid(xyz, w, 2 * order + 1)
