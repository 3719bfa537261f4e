"""Gaussian emission-line model: priors, predictions and per-spectrum likelihoods.

The physical model is deliberately split in two parts: a prediction into
data space (`predict`, the slow part for realistic models) and a cheap
per-dataset comparison (`log_likelihood`). `LineSurveyModel` bundles the
two over a whole survey so one prediction can be compared against many
spectra at once.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

NDIM = 3

AMPLITUDE_RANGE = (1.0, 100.0)        # log-uniform
WIDTH_RANGE_NM = (0.15, 15.0)         # log-uniform
LOCATION_RANGE_NM = (600.0, 1000.0)   # uniform


@dataclass(frozen=True)
class PhysicalParams:
    """Line parameters: amplitude in noise units, width and center in nm."""

    amplitude: float
    width: float
    location: float

    def as_array(self) -> np.ndarray:
        return np.array([self.amplitude, self.width, self.location])

    @classmethod
    def from_array(cls, theta) -> "PhysicalParams":
        return cls(float(theta[0]), float(theta[1]), float(theta[2]))


@dataclass(frozen=True)
class Dataset:
    """One observed spectrum: wavelength grid, fluxes and per-pixel errors."""

    id: int
    wavelengths: np.ndarray
    flux: np.ndarray
    flux_err: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        fl = np.asarray(self.flux, dtype=float)
        err = np.asarray(self.flux_err, dtype=float)
        if not (wl.ndim == fl.ndim == err.ndim == 1):
            raise ValueError("dataset arrays must be one-dimensional")
        if not (len(wl) == len(fl) == len(err)):
            raise ValueError(
                f"dataset {self.id}: arrays have lengths "
                f"{len(wl)}/{len(fl)}/{len(err)}, expected equal"
            )
        if len(wl) < 2:
            raise ValueError(f"dataset {self.id}: needs at least 2 pixels")
        if not np.all(np.diff(wl) > 0):
            raise ValueError(f"dataset {self.id}: wavelengths must be strictly increasing")
        if not np.all(err > 0):
            raise ValueError(f"dataset {self.id}: flux errors must be strictly positive")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "flux", fl)
        object.__setattr__(self, "flux_err", err)

    def __len__(self) -> int:
        return len(self.wavelengths)


def prior_transform(u) -> PhysicalParams:
    """Map a point of the unit cube to line parameters.

    Amplitude and width are log-uniform over their ranges, the location is
    uniform over 600-1000 nm.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (NDIM,):
        raise ValueError(f"expected a {NDIM}-vector, got shape {u.shape}")
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError(f"unit-cube coordinates outside [0, 1]: {u}")
    amplitude = 10.0 ** (2.0 * u[0])
    width = 0.15 * 100.0 ** u[1]
    location = 600.0 + 400.0 * u[2]
    return PhysicalParams(amplitude, width, location)


def inverse_prior_transform(params: PhysicalParams) -> np.ndarray:
    """Inverse of `prior_transform`; exact up to floating rounding."""
    u0 = math.log10(params.amplitude) / 2.0
    u1 = math.log(params.width / 0.15) / math.log(100.0)
    u2 = (params.location - 600.0) / 400.0
    return np.array([u0, u1, u2])


def predict(params: PhysicalParams, wavelengths) -> np.ndarray:
    """Evaluate the Gaussian line profile on a wavelength grid."""
    wl = np.asarray(wavelengths, dtype=float)
    d = wl - params.location
    return params.amplitude * np.exp(-(d * d) / (2.0 * params.width * params.width))


def log_likelihood(prediction, dataset: Dataset) -> float:
    """Gaussian log-likelihood of a prediction, normalisation included.

    The ln(2 pi sigma^2) terms are kept so that evidences computed from
    this likelihood are directly comparable with `null_log_evidence`.
    """
    m = np.asarray(prediction, dtype=float)
    if m.shape != dataset.flux.shape:
        raise ValueError(
            f"prediction length {m.shape} does not match dataset length {dataset.flux.shape}"
        )
    r = dataset.flux - m
    var = dataset.flux_err * dataset.flux_err
    return -0.5 * float(np.sum(r * r / var + np.log(2.0 * np.pi * var)))


def null_log_evidence(dataset: Dataset) -> float:
    """Analytic log-evidence of the no-line model (prediction identically zero)."""
    x = dataset.flux
    var = dataset.flux_err * dataset.flux_err
    return -0.5 * float(np.sum(x * x / var + np.log(2.0 * np.pi * var)))


class LineSurveyModel:
    """Joint model over a survey: one slow prediction feeds many fast comparisons.

    Datasets sharing a wavelength grid are stacked so their residuals are
    computed in a single vectorised pass. `loglikes` performs exactly one
    model prediction per call (per distinct grid touched), which is the
    unit the evaluation counters measure.
    """

    def __init__(self, datasets, n_threads: int = 0):
        self.datasets = list(datasets)
        if not self.datasets:
            raise ValueError("need at least one dataset")
        self.ndim = NDIM
        self.n_datasets = len(self.datasets)
        self.n_threads = int(n_threads)
        self._pool = None

        # group datasets with identical grids for stacked residual computation
        grids: dict[bytes, int] = {}
        self._grid_of = np.empty(self.n_datasets, dtype=np.intp)
        self._row_of = np.empty(self.n_datasets, dtype=np.intp)
        members: list[list[int]] = []
        for j, d in enumerate(self.datasets):
            key = d.wavelengths.tobytes()
            g = grids.setdefault(key, len(members))
            if g == len(members):
                members.append([])
            self._grid_of[j] = g
            self._row_of[j] = len(members[g])
            members[g].append(j)
        self._grids = []
        for g, idx in enumerate(members):
            wl = self.datasets[idx[0]].wavelengths
            flux = np.stack([self.datasets[j].flux for j in idx])
            var = np.stack([self.datasets[j].flux_err ** 2 for j in idx])
            inv_var = 1.0 / var
            log_norm = -0.5 * np.sum(np.log(2.0 * np.pi * var), axis=1)
            self._grids.append((wl, flux, inv_var, log_norm))

    def transform(self, u) -> np.ndarray:
        return prior_transform(u).as_array()

    def loglikes(self, theta, indices) -> np.ndarray:
        """Log-likelihoods of parameter vector `theta` for the given dataset indices."""
        indices = np.asarray(indices, dtype=np.intp)
        params = PhysicalParams.from_array(theta)
        out = np.empty(len(indices))
        grid_ids = self._grid_of[indices]
        for g in np.unique(grid_ids):
            sel = grid_ids == g
            rows = self._row_of[indices[sel]]
            wl, flux, inv_var, log_norm = self._grids[g]
            m = predict(params, wl)
            out[sel] = self._compare(flux, inv_var, log_norm, m, rows)
        return out

    def _compare(self, flux, inv_var, log_norm, m, rows) -> np.ndarray:
        if self.n_threads > 1 and len(rows) >= 4 * self.n_threads:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=self.n_threads)
            chunks = np.array_split(np.arange(len(rows)), self.n_threads)
            parts = self._pool.map(
                lambda c: _chisq_rows(flux, inv_var, m, rows[c]), chunks
            )
            chi2 = np.concatenate(list(parts))
        else:
            chi2 = _chisq_rows(flux, inv_var, m, rows)
        return -0.5 * chi2 + log_norm[rows]

    def null_log_evidences(self) -> np.ndarray:
        return np.array([null_log_evidence(d) for d in self.datasets])


def _chisq_rows(flux, inv_var, m, rows) -> np.ndarray:
    r = flux[rows] - m
    return np.einsum("ij,ij->i", r * r, inv_var[rows])
