"""Seeded sampling primitives shared by tests, trials, and search routines.

Seeds are split counter-style through numpy's SeedSequence so concurrent
restarts and trials stay reproducible regardless of scheduling.
"""

from __future__ import annotations

import numpy as np


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for (seed, key...) with independent streams."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def unit_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def ginibre(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)


def haar_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(ginibre(rng, d, d))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def haar_isometry(rng: np.random.Generator, d: int, r: int) -> np.ndarray:
    """d x r matrix with orthonormal columns, Haar-distributed range."""
    if r > d:
        raise ValueError("isometry needs d >= r")
    q, rr = np.linalg.qr(ginibre(rng, d, r))
    return q * (np.diag(rr) / np.abs(np.diag(rr)))


def random_hermitian(rng: np.random.Generator, d: int) -> np.ndarray:
    g = ginibre(rng, d, d)
    return (g + g.conj().T) / 2.0


def random_density(rng: np.random.Generator, d: int) -> np.ndarray:
    g = ginibre(rng, d, d)
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def corank1_projection(rng: np.random.Generator, d: int) -> np.ndarray:
    """Random rank d-1 projection: complement of a Haar-random line."""
    v = unit_vector(rng, d)
    return np.eye(d, dtype=complex) - np.outer(v, v.conj())
