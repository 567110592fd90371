"""Data containers, the balance basis g(X) and the clamped logistic link."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

# |eta| beyond this overflows nothing but pushes expit to exactly 0 or 1.
ETA_CLAMP = 36.0


class GbcalError(ValueError):
    """Invalid input to a gbcal routine."""


@dataclass(frozen=True)
class Dataset:
    """Observed data: outcome ``Y``, binary treatment ``A``, covariates ``X``.

    ``R`` is the optional observation indicator for a single missing-prone
    covariate (1 = observed).  ``X`` may hold NaN in that column only where
    ``R == 0``.
    """

    Y: np.ndarray
    A: np.ndarray
    X: np.ndarray
    R: Optional[np.ndarray] = None
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = Y.shape[0]
        if n < 2:
            raise GbcalError("need at least 2 observations")
        if A.shape[0] != n or X.shape[0] != n:
            raise GbcalError(
                f"length mismatch: Y={n}, A={A.shape[0]}, X rows={X.shape[0]}")
        if np.isnan(Y).any() or np.isnan(A).any():
            raise GbcalError("NaN in Y or A")
        if not np.isin(A, (0.0, 1.0)).all():
            raise GbcalError("treatment must be coded 0/1")
        R = self.R
        if R is not None:
            R = np.asarray(R, dtype=float).ravel()
            if R.shape[0] != n:
                raise GbcalError("length mismatch for R")
            if not np.isin(R, (0.0, 1.0)).all():
                raise GbcalError("missingness indicator must be coded 0/1")
            nan_rows = np.isnan(X).any(axis=1)
            if (nan_rows & (R == 1)).any():
                raise GbcalError("NaN covariate on a row with R=1")
        elif np.isnan(X).any():
            raise GbcalError("NaN in X without a missingness indicator")
        names = tuple(self.names) or tuple(f"X{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise GbcalError("names must match the number of covariate columns")
        for arr in (Y, A, X, R):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def check_arms(self):
        if not (self.A == 1).any() or not (self.A == 0).any():
            raise GbcalError("both treatment arms must be non-empty")

    def subset(self, idx) -> "Dataset":
        R = None if self.R is None else self.R[idx]
        return Dataset(self.Y[idx], self.A[idx], self.X[idx], R, self.names)


# Column specs are tuples: ("intercept",), ("raw", j), ("square", j),
# ("interaction", j, k); covariate indices are 0-based.
ColumnSpec = Tuple


def _normalize_spec(spec, p: int) -> Tuple[ColumnSpec, ...]:
    out = []
    for s in spec:
        if isinstance(s, int):
            s = ("raw", s)
        s = tuple(s)
        kind = s[0]
        if kind == "intercept":
            continue
        if kind in ("raw", "square"):
            idx = s[1:2]
            if len(s) != 2:
                raise GbcalError(f"bad column spec {s!r}")
        elif kind == "interaction":
            idx = s[1:3]
            if len(s) != 3:
                raise GbcalError(f"bad column spec {s!r}")
        else:
            raise GbcalError(f"unknown column kind {kind!r}")
        for j in idx:
            if not isinstance(j, (int, np.integer)) or not 0 <= j < p:
                raise GbcalError(f"invalid covariate index {j!r} in {s!r}")
        out.append((kind,) + tuple(int(j) for j in idx))
    return tuple(out)


def _raw_columns(X: np.ndarray, specs) -> np.ndarray:
    cols = np.empty((X.shape[0], len(specs)))
    for c, s in enumerate(specs):
        if s[0] == "raw":
            cols[:, c] = X[:, s[1]]
        elif s[0] == "square":
            cols[:, c] = X[:, s[1]] ** 2
        else:
            cols[:, c] = X[:, s[1]] * X[:, s[2]]
    return cols


@dataclass(frozen=True)
class BalanceBasis:
    """The balance functions g(X) with an unpenalized leading intercept."""

    specs: Tuple[ColumnSpec, ...]
    means: np.ndarray
    sds: np.ndarray
    p: int
    standardize: bool = True

    @property
    def L(self) -> int:
        """Number of penalized (non-intercept) columns."""
        return len(self.specs)

    @property
    def dim(self) -> int:
        return self.L + 1

    @property
    def covariates_used(self) -> frozenset:
        return frozenset(j for s in self.specs for j in s[1:])

    def labels(self, names: Sequence[str]) -> list:
        out = ["(intercept)"]
        for s in self.specs:
            if s[0] == "raw":
                out.append(names[s[1]])
            elif s[0] == "square":
                out.append(f"{names[s[1]]}^2")
            else:
                out.append(f"{names[s[1]]}*{names[s[2]]}")
        return out

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Evaluate the basis on every row of ``X``; returns n x (L+1)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise GbcalError(f"expected {self.p} covariate columns, got {X.shape}")
        G = np.empty((X.shape[0], self.dim))
        G[:, 0] = 1.0
        G[:, 1:] = (_raw_columns(X, self.specs) - self.means) / self.sds
        return G


def build_balance_basis(X, spec, standardize: bool = True) -> BalanceBasis:
    """Build g(X) from column specs, recording standardization from ``X``.

    Squares and interactions are formed from raw covariate values and then
    standardized like any other column.  Standardization uses the population
    SD (divisor n); rows with NaN (a missing covariate) are ignored when
    computing the moments.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    specs = _normalize_spec(spec, X.shape[1])
    raw = _raw_columns(X, specs)
    if standardize:
        means = np.nanmean(raw, axis=0) if len(specs) else np.zeros(0)
        sds = np.nanstd(raw, axis=0) if len(specs) else np.zeros(0)
        for c, sd in enumerate(sds):
            if not sd > 0:
                raise GbcalError(f"constant column {c + 1} ({specs[c]!r}) "
                                 "cannot be standardized")
    else:
        means = np.zeros(len(specs))
        sds = np.ones(len(specs))
    means.setflags(write=False)
    sds.setflags(write=False)
    return BalanceBasis(specs, means, sds, X.shape[1], standardize)


def evaluate_basis(basis: BalanceBasis, x) -> np.ndarray:
    """Basis row for a single covariate vector ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != basis.p:
        raise GbcalError(f"row has {x.shape[0]} entries, basis expects {basis.p}")
    return basis.transform(x[None, :])[0]


def clamp_eta(eta):
    return np.clip(eta, -ETA_CLAMP, ETA_CLAMP)


def count_clamped(eta) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(eta)) > ETA_CLAMP))


def expit(eta):
    """Logistic function of the clamped linear predictor."""
    eta = clamp_eta(np.asarray(eta, dtype=float))
    return 1.0 / (1.0 + np.exp(-eta))


def propensity(alpha, g_row) -> float:
    """e = expit(clamp(alpha . g)); strictly inside (0, 1)."""
    alpha = np.asarray(alpha, dtype=float)
    g_row = np.asarray(g_row, dtype=float)
    if alpha.shape != g_row.shape:
        raise GbcalError(f"dimension mismatch {alpha.shape} vs {g_row.shape}")
    return float(expit(alpha @ g_row))


@dataclass(frozen=True)
class PropensityFit:
    """Fitted propensity model: coefficients, tuning value and fitted scores."""

    alpha: np.ndarray
    lam: float
    method: str
    e: np.ndarray
    n_iter: int = 0
    n_clamped: int = 0
    info: dict = field(default_factory=dict)

    @classmethod
    def from_alpha(cls, alpha, G, lam, method, **kw) -> "PropensityFit":
        alpha = np.asarray(alpha, dtype=float)
        eta = G @ alpha
        return cls(alpha, float(lam), method, expit(eta),
                   n_clamped=count_clamped(eta), **kw)
