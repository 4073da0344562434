"""Alternating-projection reconstruction with joint pupil recovery.

Each capture ``i`` constrains the object spectrum ``O`` inside the window
centered at ``centers[i]`` through the pupil ``P``:

    psi     = O[window_i] * P
    phi     = ifft2c(psi)
    phi_hat = sqrt(I_i) * phi / |phi|
    psi_hat = fft2c(phi_hat)
    O[window_i] += alpha * conj(P) / max|P|^2 * (psi_hat - psi)
    P           += beta * conj(O_win) / max|O_win|^2 * (psi_hat - psi)

where ``O_win`` is the window before its update. The pupil is set back to
zero outside its disk after every update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .field import ComplexGrid, GridError, fft2c, ifft2c, window_slices
from .freqmap import OpticalBudget
from .scene import disk_mask

log = logging.getLogger(__name__)

ORDERS = ("spiral", "raster", "random")


class ReconstructionError(ValueError):
    pass


@dataclass
class ReconConfig:
    alpha: float = 1.0
    beta: float = 1.0
    max_iters: int = 50
    tol: float = 1e-4
    order: str = "spiral"
    update_pupil: bool = True
    pupil_warmup: int = 0
    eps: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.alpha <= 2 and 0 < self.beta <= 2):
            raise ReconstructionError("alpha and beta must lie in (0, 2]")
        if self.order not in ORDERS:
            raise ReconstructionError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.max_iters < 0:
            raise ReconstructionError("max_iters must be nonnegative")


@dataclass
class ReconState:
    O: np.ndarray
    P: np.ndarray
    support: np.ndarray
    alpha: float = 1.0
    beta: float = 1.0
    k: int = 0
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def snapshot(self) -> "ReconState":
        return ReconState(self.O.copy(), self.P.copy(), self.support.copy(), self.alpha,
                          self.beta, self.k, list(self.history), list(self.warnings))


@dataclass(frozen=True)
class ReconResult:
    object: ComplexGrid
    pupil: ComplexGrid
    history: list
    state: ReconState


def _check_inputs(images, centers, grid_size):
    images = np.asarray(images, dtype=float)
    if images.ndim != 3 or len(images) == 0:
        raise ReconstructionError("need a nonempty (K, W, W) stack of images")
    if images.shape[1] != images.shape[2]:
        raise ReconstructionError("captures must be square")
    centers = np.asarray(centers, dtype=int).reshape(-1, 2)
    if len(centers) != len(images):
        raise ReconstructionError(f"{len(images)} images but {len(centers)} centers")
    W = images.shape[1]
    for c in centers:
        try:
            window_slices((grid_size, grid_size), c, W)
        except GridError as exc:
            raise ReconstructionError(f"pupil window out of range: {exc}") from None
    return images, centers


def traversal_order(centers, ref: int, order: str = "spiral", rng=None) -> np.ndarray:
    """Capture visiting order for one pass."""
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    if order == "raster":
        return np.arange(n)
    if order == "random":
        rng = np.random.default_rng() if rng is None else rng
        return rng.permutation(n)
    d = centers - centers[ref]
    radius = np.hypot(d[:, 0], d[:, 1])
    angle = np.arctan2(d[:, 0], d[:, 1])
    return np.lexsort((angle, np.round(radius, 6)))


def initialize_state(images, centers, budget: OpticalBudget, ref: int = 0,
                     config: ReconConfig | None = None) -> ReconState:
    """Seed the spectrum with the band-limited upsampled reference amplitude.

    The reference image's square root is treated as a zero-phase field; its
    spectrum is placed, unchanged, at the reference window of an otherwise
    empty ``M x M`` spectrum. Under the unitary transforms this makes the
    forward model at the reference reproduce the disk-filtered amplitude.
    A disk wider than the capture window is clipped to it; from ``W * sqrt(2)``
    on the pupil passes the whole window.
    """
    config = ReconConfig() if config is None else config
    M = budget.grid_size
    images, centers = _check_inputs(images, centers, M)
    W = images.shape[1]
    if not 0 <= ref < len(images):
        raise ReconstructionError(f"reference index {ref} out of range")
    O = np.zeros((M, M), dtype=complex)
    rs, cs = window_slices(O.shape, centers[ref], W)
    O[rs, cs] = fft2c(np.sqrt(np.maximum(images[ref], 0)))
    support = disk_mask(W, budget.d_pixel)
    P = support.astype(complex)
    return ReconState(O, P, support, config.alpha, config.beta)


def data_misfit(state: ReconState, images, centers) -> float:
    """Normalized amplitude misfit of the current estimate over all captures."""
    images = np.asarray(images, dtype=float)
    W = images.shape[1]
    num = 0.0
    for img, c in zip(images, np.asarray(centers, dtype=int)):
        rs, cs = window_slices(state.O.shape, c, W)
        phi = ifft2c(state.O[rs, cs] * state.P)
        num += float(np.sum((np.sqrt(img) - np.abs(phi)) ** 2))
    return num / max(float(images.sum()), 1e-300)


def amplitude_projection(phi: np.ndarray, amplitude: np.ndarray, eps: float) -> np.ndarray:
    """Replace the modulus of ``phi`` by ``amplitude``; zero-phase where ``|phi| <= eps``."""
    mod = np.abs(phi)
    unit = np.where(mod > eps, phi / np.where(mod > eps, mod, 1.0), 1.0)
    return amplitude * unit


def update_capture(state: ReconState, amplitude, center, eps=1e-12, update_pupil=True) -> float:
    """One projection-and-update step for a single capture; returns its misfit sum."""
    W = amplitude.shape[0]
    rs, cs = window_slices(state.O.shape, center, W)
    o_win = state.O[rs, cs].copy()
    psi = o_win * state.P
    phi = ifft2c(psi)
    err = float(np.sum((amplitude - np.abs(phi)) ** 2))
    diff = fft2c(amplitude_projection(phi, amplitude, eps)) - psi

    p_max = float(np.max(np.abs(state.P) ** 2))
    if p_max <= eps:
        state.warnings.append(f"pass {state.k}: pupil vanished, step guarded")
    state.O[rs, cs] = o_win + state.alpha * np.conj(state.P) / max(p_max, eps) * diff
    if update_pupil:
        o_max = float(np.max(np.abs(o_win) ** 2))
        if o_max <= eps:
            state.warnings.append(f"pass {state.k}: empty spectrum window at {tuple(center)}, step guarded")
        state.P = state.P + state.beta * np.conj(o_win) / max(o_max, eps) * diff
        state.P[~state.support] = 0
    return err


def epie_iteration(state: ReconState, images, centers, order=None, config: ReconConfig | None = None) -> ReconState:
    """One full pass over the captures; updates ``state`` in place and returns it."""
    config = ReconConfig() if config is None else config
    images = np.asarray(images, dtype=float)
    centers = np.asarray(centers, dtype=int)
    order = np.arange(len(images)) if order is None else order
    amps = np.sqrt(np.maximum(images, 0))
    pupil_on = config.update_pupil and state.k >= config.pupil_warmup
    total = 0.0
    for i in order:
        total += update_capture(state, amps[i], centers[i], config.eps, pupil_on)
    state.k += 1
    state.history.append(total / max(float(images.sum()), 1e-300))
    return state


def converged(history, tol, window=3) -> bool:
    if len(history) < window + 1:
        return False
    h = np.asarray(history[-(window + 1):])
    rel = np.abs(np.diff(h)) / np.maximum(h[:-1], 1e-300)
    return bool(np.all(rel < tol))


def reconstruct(images, centers, budget: OpticalBudget, ref: int = 0,
                config: ReconConfig | None = None, state: ReconState | None = None) -> ReconResult:
    """Run passes until ``max_iters`` or the misfit stalls.

    ``history[0]`` is the misfit of the initial estimate; entry ``k`` is the
    misfit accumulated during pass ``k`` from the pre-update fields.
    """
    config = ReconConfig() if config is None else config
    images = np.asarray(images, dtype=float)
    if images.size == 0 or len(images) == 0:
        raise ReconstructionError("no captures left to reconstruct from")
    if state is None:
        state = initialize_state(images, centers, budget, ref, config)
    centers = np.asarray(centers, dtype=int)
    state.history.append(data_misfit(state, images, centers))
    rng = np.random.default_rng(config.seed)
    fixed = traversal_order(centers, ref, config.order, rng)
    while state.k < config.max_iters:
        order = traversal_order(centers, ref, "random", rng) if config.order == "random" else fixed
        epie_iteration(state, images, centers, order, config)
        log.debug("pass %d misfit %.3e", state.k, state.history[-1])
        if config.tol > 0 and converged(state.history[1:], config.tol):
            break
    M = budget.grid_size
    obj = ComplexGrid(ifft2c(state.O), pitch=1.0)
    pupil = ComplexGrid(state.P, pitch=1.0 / (M * 1.0))
    return ReconResult(obj, pupil, list(state.history), state)
