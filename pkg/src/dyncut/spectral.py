"""Augmented spectral moments and the time-varying covariance they imply.

Returns are modelled as ``r(t) = Phi(t) x(t)`` where ``Phi(t)`` stacks scaled
identity blocks ``e^{+j w_m t} I``, ``e^{-j w_m t} I`` (and optionally a real
DC block). The first two moments of the augmented spectral variable ``x`` are
estimated by least squares on the training window:

* mean: ``r(t) ~ Phi(t) mu``
* covariance: ``s(t) s(t)^T ~ Phi(t) C Phi(t)^H`` with ``s = r - Phi mu``

The right-hand sides of both normal equations are the correlation moments
``1/T sum Phi^H r`` and ``1/T sum Phi^H s s^T Phi``. They are mapped through
the pseudo-inverse of the matching Gram matrix, which restores the correct
scale whenever more than one basis block is present (the raw moments alone
reproduce the sample statistics only in the DC-only case).

Block layout of every stacked vector/matrix, with ``M`` positive frequencies::

    [ +w_1 .. +w_M | -w_1 .. -w_M | dc ]

each block being ``N`` entries wide.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from .ingest import ReturnsTable

IMAG_ERROR_TOL = 1e-6
_GRAM_RCOND = 1e-10
_CHUNK = 512


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyGrid:
    omegas: tuple[float, ...]
    include_dc: bool = True

    def __post_init__(self):
        omegas = tuple(float(w) for w in np.atleast_1d(np.asarray(self.omegas, dtype=float)))
        object.__setattr__(self, "omegas", omegas)
        w = np.asarray(omegas)
        if np.any(~np.isfinite(w)) or np.any(w <= 0) or np.any(w > np.pi + 1e-15):
            raise SpectralError("frequencies must lie in (0, pi] radians/sample")
        if np.any(np.diff(w) <= 0):
            raise SpectralError("frequencies must be strictly increasing and distinct")
        if not omegas and not self.include_dc:
            raise SpectralError("empty grid: need at least one frequency or the DC column")

    @property
    def n_freq(self) -> int:
        return len(self.omegas)

    @property
    def n_blocks(self) -> int:
        return 2 * self.n_freq + int(self.include_dc)

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(2 * self.n_freq) if self.n_freq else 1.0

    def phasors(self, t) -> np.ndarray:
        """Scalar block coefficients at integer times ``t``; shape ``t.shape + (n_blocks,)``."""
        t = np.asarray(t, dtype=float)
        w = np.asarray(self.omegas)
        pos = np.exp(1j * t[..., None] * w)
        parts = [pos, pos.conj()]
        if self.include_dc:
            parts.append(np.ones(t.shape + (1,), dtype=complex))
        return self.scale * np.concatenate(parts, axis=-1)

    def conjugate_permutation(self) -> np.ndarray:
        """Block permutation mapping +w blocks to -w blocks and back; DC is fixed."""
        m = self.n_freq
        perm = list(range(m, 2 * m)) + list(range(m))
        if self.include_dc:
            perm.append(2 * m)
        return np.asarray(perm)

    def block_frequency_index(self) -> np.ndarray:
        """Index of the underlying |frequency| for each block (DC gets ``n_freq``)."""
        m = self.n_freq
        idx = list(range(m)) * 2
        if self.include_dc:
            idx.append(m)
        return np.asarray(idx)

    def to_dict(self) -> dict:
        return {"omegas": list(self.omegas), "include_dc": bool(self.include_dc)}

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyGrid":
        return cls(tuple(d["omegas"]), bool(d["include_dc"]))


def default_grid(period: int, n_harmonics: int, include_dc: bool = True) -> FrequencyGrid:
    if period < 2:
        raise SpectralError("period must be at least 2 samples")
    if n_harmonics < 1 or n_harmonics > period // 2:
        raise SpectralError(
            f"n_harmonics={n_harmonics} outside [1, {period // 2}] (Nyquist bound for period {period})"
        )
    return FrequencyGrid(tuple(2 * np.pi * m / period for m in range(1, n_harmonics + 1)), include_dc)


def stationary_grid() -> FrequencyGrid:
    return FrequencyGrid((), include_dc=True)


@dataclass(frozen=True)
class AugmentedBasis:
    grid: FrequencyGrid
    n_assets: int

    def __post_init__(self):
        if self.n_assets < 1:
            raise SpectralError("basis needs at least one asset")

    @property
    def width(self) -> int:
        return self.grid.n_blocks * self.n_assets

    def __call__(self, t: int) -> np.ndarray:
        """Dense ``N x (n_blocks * N)`` basis matrix at time ``t``."""
        return np.kron(self.grid.phasors(t)[None, :], np.eye(self.n_assets))


def build_basis(grid: FrequencyGrid, n_assets: int) -> AugmentedBasis:
    return AugmentedBasis(grid, n_assets)


@dataclass
class AugmentedSpectralMoments:
    mean: np.ndarray
    covariance: np.ndarray
    grid: FrequencyGrid
    n_assets: int
    n_train: int
    tickers: tuple[str, ...] = ()
    cross_frequency: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def n_blocks(self) -> int:
        return self.grid.n_blocks

    @cached_property
    def _mean_blocks(self) -> np.ndarray:
        return self.mean.reshape(self.n_blocks, self.n_assets)

    @cached_property
    def _cov_pairs(self) -> np.ndarray:
        # (a*F + b, i*N + j) layout so that R(t) = d(t) @ pairs with d_ab = phi_a conj(phi_b)
        f, n = self.n_blocks, self.n_assets
        c4 = self.covariance.reshape(f, n, f, n).transpose(0, 2, 1, 3)
        return c4.reshape(f * f, n * n)

    @cached_property
    def _cov_norm(self) -> float:
        return float(np.linalg.norm(self.covariance))

    # serialization ---------------------------------------------------------

    def _header(self) -> dict:
        return {
            "tickers": list(self.tickers),
            "grid": self.grid.to_dict(),
            "n_assets": int(self.n_assets),
            "n_train": int(self.n_train),
            "cross_frequency": bool(self.cross_frequency),
            "meta": self.meta,
        }

    def save(self, path) -> None:
        """Write to ``.json`` (re/im interleaved lists) or a binary container."""
        path = Path(path)
        if path.suffix.lower() == ".json":
            doc = self._header()
            doc["mean"] = _interleave(self.mean)
            doc["covariance"] = _interleave(self.covariance)
            path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
            return
        header = json.dumps(self._header(), sort_keys=True).encode("utf-8")
        with path.open("wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.mean, dtype="<c16").tobytes())
            fh.write(np.ascontiguousarray(self.covariance, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path) -> "AugmentedSpectralMoments":
        path = Path(path)
        raw = path.read_bytes()
        if raw.startswith(_MAGIC):
            off = len(_MAGIC)
            (hlen,) = struct.unpack("<Q", raw[off:off + 8])
            off += 8
            doc = json.loads(raw[off:off + hlen].decode("utf-8"))
            off += hlen
            grid = FrequencyGrid.from_dict(doc["grid"])
            width = grid.n_blocks * doc["n_assets"]
            body = np.frombuffer(raw[off:], dtype="<c16")
            if body.size != width + width * width:
                raise SpectralError(f"{path}: truncated moments file")
            mean, cov = body[:width].copy(), body[width:].reshape(width, width).copy()
        else:
            doc = json.loads(raw.decode("utf-8"))
            grid = FrequencyGrid.from_dict(doc["grid"])
            width = grid.n_blocks * doc["n_assets"]
            mean = _deinterleave(doc["mean"]).reshape(width)
            cov = _deinterleave(doc["covariance"]).reshape(width, width)
        return cls(
            mean=mean, covariance=cov, grid=grid, n_assets=int(doc["n_assets"]),
            n_train=int(doc["n_train"]), tickers=tuple(doc["tickers"]),
            cross_frequency=bool(doc["cross_frequency"]), meta=doc.get("meta", {}),
        )


_MAGIC = b"DYNCUTM1"


def _interleave(a: np.ndarray) -> list[float]:
    a = np.ascontiguousarray(a, dtype=complex).ravel()
    return np.stack([a.real, a.imag], axis=1).ravel().tolist()


def _deinterleave(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1, 2)
    return v[:, 0] + 1j * v[:, 1]


def _returns_array(r) -> np.ndarray:
    arr = r.returns if isinstance(r, ReturnsTable) else np.asarray(r, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _enforce_pairing_vec(v: np.ndarray, grid: FrequencyGrid, n: int) -> np.ndarray:
    perm = grid.conjugate_permutation()
    blocks = v.reshape(grid.n_blocks, n)
    return (0.5 * (blocks + blocks[perm].conj())).ravel()


def _enforce_pairing_mat(c: np.ndarray, grid: FrequencyGrid, n: int) -> np.ndarray:
    f = grid.n_blocks
    perm = grid.conjugate_permutation()
    c4 = c.reshape(f, n, f, n)
    c4 = 0.5 * (c4 + c4[perm][:, :, perm].conj())
    c = c4.reshape(f * n, f * n)
    return 0.5 * (c + c.conj().T)


def fit_spectral_mean(r, basis: AugmentedBasis, times=None, gram_correction: bool = True) -> np.ndarray:
    """Least-squares spectral mean, stacked as ``n_blocks * N`` complex entries.

    With ``gram_correction=False`` the raw correlation moment
    ``1/T sum_t Phi^H(t) r(t)`` is returned unchanged.
    """
    x = _returns_array(r)
    T, n = x.shape
    if T < 1:
        raise SpectralError("need at least one observation")
    if n != basis.n_assets:
        raise SpectralError(f"basis built for {basis.n_assets} assets, returns have {n}")
    grid = basis.grid
    t = np.arange(T) if times is None else np.asarray(times)
    phi = grid.phasors(t)
    rhs = phi.conj().T @ x / T
    if gram_correction and grid.n_blocks > 1:
        gram = phi.conj().T @ phi / T
        rhs = linalg.pinvh(gram, rtol=_GRAM_RCOND) @ rhs
    return _enforce_pairing_vec(rhs.ravel(), grid, n)


def _pair_mask(grid: FrequencyGrid, cross_frequency: bool) -> np.ndarray:
    f = grid.n_blocks
    if cross_frequency:
        return np.ones(f * f, dtype=bool)
    idx = grid.block_frequency_index()
    return (idx[:, None] == idx[None, :]).ravel()


def fit_spectral_covariance(
    r,
    basis: AugmentedBasis,
    mean: np.ndarray,
    times=None,
    cross_frequency: bool = True,
    gram_correction: bool = True,
    tickers=(),
) -> AugmentedSpectralMoments:
    """Least-squares augmented spectral covariance of the centred returns.

    ``cross_frequency=False`` constrains every block pairing two different
    frequencies to zero (only R(w_k), P(w_k) and DC blocks survive).
    """
    x = _returns_array(r)
    T, n = x.shape
    grid = basis.grid
    f = grid.n_blocks
    mean = np.asarray(mean, dtype=complex).ravel()
    if n != basis.n_assets or mean.size != f * n:
        raise SpectralError(
            f"dimension mismatch: returns N={n}, basis N={basis.n_assets}, "
            f"mean length {mean.size} (expected {f * n})"
        )
    if T < 1:
        raise SpectralError("need at least one observation")
    if isinstance(r, ReturnsTable) and not tickers:
        tickers = r.tickers
    t = np.arange(T) if times is None else np.asarray(times)

    phi_all = grid.phasors(t)
    fitted_mean = (phi_all @ mean.reshape(f, n)).real
    s_all = x - fitted_mean

    # accumulate in time chunks: raw[ab, ij] = 1/T sum conj(phi_a) phi_b s_i s_j
    raw = np.zeros((f * f, n * n), dtype=complex)
    gram = np.zeros((f * f, f * f), dtype=complex)
    for lo in range(0, T, _CHUNK):
        phi = phi_all[lo:lo + _CHUNK]
        s = s_all[lo:lo + _CHUNK]
        psi = (phi.conj()[:, :, None] * phi[:, None, :]).reshape(len(phi), f * f)
        ss = (s[:, :, None] * s[:, None, :]).reshape(len(s), n * n)
        raw += psi.T @ ss
        if gram_correction:
            gram += psi.T @ psi.conj()
    raw /= T
    gram /= T

    mask = _pair_mask(grid, cross_frequency)
    coef = np.zeros_like(raw)
    if gram_correction and f > 1:
        sub = gram[np.ix_(mask, mask)]
        coef[mask] = linalg.pinvh(sub, rtol=_GRAM_RCOND) @ raw[mask]
    else:
        coef[mask] = raw[mask]

    cov = coef.reshape(f, f, n, n).transpose(0, 2, 1, 3).reshape(f * n, f * n)
    cov = _enforce_pairing_mat(cov, grid, n)
    return AugmentedSpectralMoments(
        mean=mean, covariance=cov, grid=grid, n_assets=n, n_train=T,
        tickers=tuple(tickers), cross_frequency=cross_frequency,
    )


def fit_moments(
    r,
    grid: FrequencyGrid,
    cross_frequency: bool = True,
    gram_correction: bool = True,
) -> AugmentedSpectralMoments:
    """Fit mean then covariance on a training window starting at t=0."""
    x = _returns_array(r)
    basis = build_basis(grid, x.shape[1])
    mean = fit_spectral_mean(x, basis, gram_correction=gram_correction)
    tickers = r.tickers if isinstance(r, ReturnsTable) else ()
    return fit_spectral_covariance(
        x, basis, mean, cross_frequency=cross_frequency,
        gram_correction=gram_correction, tickers=tickers,
    )


def psd_project(R: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues of symmetric matrices (last two axes) to zero."""
    vals, vecs = np.linalg.eigh(R)
    if np.all(vals >= 0):
        return R
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _imag_ratio(raw: np.ndarray, cov_norm: float) -> np.ndarray:
    if cov_norm == 0:
        return np.zeros(len(raw))
    return np.linalg.norm(raw.imag, axis=1) / cov_norm


def imaginary_residual(moments: AugmentedSpectralMoments, t) -> np.ndarray:
    """``||Im R(t)||_F / ||C||_F`` before the imaginary part is discarded."""
    t = np.atleast_1d(np.asarray(t))
    raw = _pair_phasors(moments.grid, t) @ moments._cov_pairs
    return _imag_ratio(raw, moments._cov_norm)


def _pair_phasors(grid: FrequencyGrid, t: np.ndarray) -> np.ndarray:
    phi = grid.phasors(t)
    f = grid.n_blocks
    return (phi[:, :, None] * phi.conj()[:, None, :]).reshape(len(t), f * f)


def reconstruct_many(
    moments: AugmentedSpectralMoments, times, psd_repair: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`reconstruct`; returns ``(T, N)`` means and ``(T, N, N)`` covariances."""
    t = np.atleast_1d(np.asarray(times))
    n = moments.n_assets
    phi = moments.grid.phasors(t)
    m = phi @ moments._mean_blocks
    raw = _pair_phasors(moments.grid, t) @ moments._cov_pairs
    resid = _imag_ratio(raw, moments._cov_norm)
    if len(resid):
        worst = int(np.argmax(resid))
        if resid[worst] > IMAG_ERROR_TOL:
            raise SpectralError(
                f"imaginary residual {resid[worst]:.3e} at t={t[worst]} exceeds {IMAG_ERROR_TOL:g}: "
                "augmented symmetry broken upstream"
            )
    R = raw.real.reshape(len(t), n, n)
    R = 0.5 * (R + np.swapaxes(R, 1, 2))
    if psd_repair:
        R = psd_project(R)
    return m.real, R


def reconstruct(
    moments: AugmentedSpectralMoments, t: int, psd_repair: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Time-varying mean ``m(t)`` and covariance ``R(t)`` at integer time ``t``.

    ``t`` may lie outside the training window; the model is extrapolated
    through the periodic basis.
    """
    m, R = reconstruct_many(moments, [t], psd_repair=psd_repair)
    return m[0], R[0]


def sample_moments(r) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and biased (1/T) covariance."""
    x = _returns_array(r)
    mu = x.mean(axis=0)
    s = x - mu
    return mu, s.T @ s / len(x)
