"""Generalized extreme value fits that turn subjective JND samples into one target level."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats

from jndscope.errors import JndscopeError

EULER_GAMMA = 0.5772156649015329
GUMBEL_EPS = 1e-6
DEGENERATE_VARIANCE = 1e-9
GEV_CSV_COLUMNS = ("image_id", "mu", "sigma", "xi", "target")


class DegenerateSamples(JndscopeError, ValueError):
    """Samples are (numerically) constant, so no scale can be estimated."""


class InsufficientSamples(JndscopeError, ValueError):
    """Fewer samples than the configured minimum."""


class NoConvergence(JndscopeError):
    """The likelihood optimiser stopped without converging."""

    def __init__(self, message: str, trace: Sequence[float]):
        self.trace = list(trace)
        tail = ", ".join(f"{value:.4f}" for value in self.trace[-5:])
        super().__init__(f"{message} after {len(self.trace)} iterations (last nll: {tail})")


@dataclass(frozen=True)
class GEVParams:
    """Location ``mu``, scale ``sigma`` and shape ``xi`` (``xi > 0`` is heavy-tailed)."""

    mu: float
    sigma: float
    xi: float
    log_likelihood: float = float("nan")
    converged: bool = True
    iterations: int = 0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"GEV scale must be positive, got {self.sigma}")

    def _frozen(self):
        # scipy's genextreme uses c = -xi
        return stats.genextreme(c=-self.xi, loc=self.mu, scale=self.sigma)

    def cdf(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        return self._frozen().cdf(x)

    def to_dict(self) -> dict:
        return asdict(self)


def negative_log_likelihood(theta: Sequence[float], data: np.ndarray) -> float:
    """GEV negative log-likelihood with ``theta = (mu, log_sigma, xi)``."""
    mu, log_sigma, xi = theta
    sigma = math.exp(log_sigma)
    z = (data - mu) / sigma
    n = data.size
    if abs(xi) < GUMBEL_EPS:
        return float(n * log_sigma + np.sum(z) + np.sum(np.exp(-z)))
    t = 1.0 + xi * z
    if np.any(t <= 0.0):
        return math.inf
    log_t = np.log(t)
    return float(n * log_sigma + (1.0 + 1.0 / xi) * np.sum(log_t) + np.sum(np.exp(-log_t / xi)))


def moment_start(data: np.ndarray) -> Tuple[float, float, float]:
    """Gumbel method-of-moments start with a mild positive shape when it is admissible."""
    sigma0 = math.sqrt(6.0 * float(np.var(data))) / math.pi
    mu0 = float(np.mean(data)) - EULER_GAMMA * sigma0
    xi0 = 0.1
    if np.any(1.0 + xi0 * (data - mu0) / sigma0 <= 0.0):
        xi0 = 0.0
    return mu0, math.log(sigma0), xi0


def fit_gev(
    samples: Iterable[float],
    min_n: int = 5,
    *,
    max_iter: int = 5000,
) -> GEVParams:
    """Maximum-likelihood GEV fit (Nelder-Mead from a moment-based start)."""
    data = np.asarray(list(samples), dtype=np.float64)
    if data.size < min_n:
        raise InsufficientSamples(f"need at least {min_n} samples, got {data.size}")
    if not np.all(np.isfinite(data)):
        raise ValueError("samples must be finite")
    if float(np.var(data)) < DEGENERATE_VARIANCE:
        raise DegenerateSamples(
            f"sample variance below {DEGENERATE_VARIANCE:g}; all values ~ {data[0]:g}"
        )

    trace: List[float] = []

    def _record(theta: np.ndarray) -> None:
        trace.append(negative_log_likelihood(theta, data))

    result = optimize.minimize(
        negative_log_likelihood,
        np.asarray(moment_start(data)),
        args=(data,),
        method="Nelder-Mead",
        callback=_record,
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": max_iter, "maxfev": 4 * max_iter},
    )
    if not result.success or not np.isfinite(result.fun):
        raise NoConvergence(f"GEV fit did not converge ({result.message})", trace)

    mu, log_sigma, xi = (float(v) for v in result.x)
    if abs(xi) < GUMBEL_EPS:
        xi = 0.0
    return GEVParams(
        mu=mu,
        sigma=math.exp(log_sigma),
        xi=xi,
        log_likelihood=-float(result.fun),
        converged=True,
        iterations=int(result.nit),
    )


def gev_quantile(params: GEVParams, quantile: float) -> float:
    """Unrounded inverse CDF."""
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {quantile}")
    return float(params._frozen().ppf(quantile))


def gev_target(
    params: GEVParams,
    quantile: float = 0.5,
    level_range: Tuple[int, int] = (1, 100),
) -> int:
    """Inverse CDF at ``quantile``, rounded half-up and clamped to ``level_range``."""
    value = gev_quantile(params, quantile)
    lo, hi = level_range
    if not math.isfinite(value):
        return hi if value > 0 else lo
    return int(min(hi, max(lo, math.floor(value + 0.5))))


def gev_sample(params: GEVParams, size: int, seed: int) -> np.ndarray:
    """Draw samples through the inverse CDF of uniform variates."""
    uniforms = np.random.default_rng(seed).uniform(size=size)
    uniforms = np.clip(uniforms, 1e-12, 1.0 - 1e-12)
    return np.asarray(params._frozen().ppf(uniforms), dtype=np.float64)


def write_gev_csv(
    rows: Iterable[Mapping[str, object]], path: Union[str, Path]
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=GEV_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _fmt(row.get(key)) for key in GEV_CSV_COLUMNS})
    return path


def _fmt(value: Optional[object]) -> object:
    if isinstance(value, float):
        return f"{value:.6f}"
    return "" if value is None else value
