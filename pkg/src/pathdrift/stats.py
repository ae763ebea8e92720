"""Statistical primitives shared by every analysis.

All estimators are pure functions. Anything stochastic draws from an
``RngPolicy`` substream that is a pure function of (master seed, labels), so
results are identical regardless of worker count or execution order.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence, TypeVar

import numpy as np
from scipy import stats as sps

from .errors import DegenerateVarianceError, NotComputableError, SeparationError

T = TypeVar("T")

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class Estimate:
    """A point estimate with its 95% interval, p-value, and sample size."""

    point: float
    ci_low: float
    ci_high: float
    p_value: float
    n: int
    method: str

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def _label_entropy(label: Hashable) -> int:
    if isinstance(label, bool):
        return int(label)
    if isinstance(label, (int, np.integer)):
        return int(label) & _U64
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class RngPolicy:
    """Derives independent, schedule-invariant random streams.

    ``stream(*labels)`` seeds a fresh generator from (master_seed, labels),
    so resample i of analysis A always sees the same stream no matter which
    worker runs it.
    """

    master_seed: int = 0

    def stream(self, *labels: Hashable) -> np.random.Generator:
        entropy = [self.master_seed & _U64] + [_label_entropy(l) for l in labels]
        return np.random.default_rng(entropy)


def paired_t(deltas: Sequence[float]) -> Estimate:
    """Two-sided one-sample t-test of mean zero on within-unit differences."""
    arr = np.asarray(list(deltas), dtype=float)
    n = arr.size
    if n < 2:
        raise NotComputableError(f"paired t-test needs >= 2 differences, got {n}")
    sd = float(arr.std(ddof=1))
    if sd == 0.0:
        raise DegenerateVarianceError("paired t-test: all differences are identical")
    mean = float(arr.mean())
    se = sd / math.sqrt(n)
    t_stat = mean / se
    df = n - 1
    p = 2.0 * float(sps.t.sf(abs(t_stat), df))
    half = float(sps.t.ppf(0.975, df)) * se
    return Estimate(
        point=mean,
        ci_low=mean - half,
        ci_high=mean + half,
        p_value=min(p, 1.0),
        n=n,
        method="paired_t",
    )


def two_sample_t(a: Sequence[float], b: Sequence[float]) -> Estimate:
    """Welch two-sample t-test on the difference of means (a minus b)."""
    xa = np.asarray(list(a), dtype=float)
    xb = np.asarray(list(b), dtype=float)
    if xa.size < 2 or xb.size < 2:
        raise NotComputableError("two-sample t-test needs >= 2 values per group")
    if xa.std(ddof=1) == 0.0 and xb.std(ddof=1) == 0.0:
        raise DegenerateVarianceError("two-sample t-test: both groups are constant")
    res = sps.ttest_ind(xa, xb, equal_var=False)
    diff = float(xa.mean() - xb.mean())
    se = math.sqrt(xa.var(ddof=1) / xa.size + xb.var(ddof=1) / xb.size)
    df = float(res.df)
    half = float(sps.t.ppf(0.975, df)) * se
    return Estimate(
        point=diff,
        ci_low=diff - half,
        ci_high=diff + half,
        p_value=float(res.pvalue),
        n=int(xa.size + xb.size),
        method="welch_t",
    )


def _bootstrap_chunk(
    clusters: Sequence[T],
    statistic: Callable[[Sequence[T]], float],
    rng: RngPolicy,
    label: Hashable,
    start: int,
    stop: int,
) -> np.ndarray:
    n = len(clusters)
    out = np.empty(stop - start, dtype=float)
    for i in range(start, stop):
        idx = rng.stream("bootstrap", label, i).integers(0, n, size=n)
        out[i - start] = statistic([clusters[j] for j in idx])
    return out


def bootstrap_ci(
    clusters: Sequence[T],
    statistic: Callable[[Sequence[T]], float],
    resamples: int = 5000,
    rng: RngPolicy | None = None,
    label: Hashable = "",
    workers: int = 1,
) -> Estimate:
    """Percentile bootstrap over clusters resampled with replacement.

    ``clusters`` are opaque objects (a cluster is the resampling unit); the
    statistic maps a cluster list to a scalar. Resample i's indices come from
    the substream (master_seed, "bootstrap", label, i), which makes the
    interval bit-identical across worker counts. The p-value is the
    two-sided percentile tail mass against zero.
    """
    if len(clusters) < 2:
        raise NotComputableError(f"bootstrap needs >= 2 clusters, got {len(clusters)}")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    rng = rng or RngPolicy()
    point = float(statistic(clusters))

    if workers <= 1:
        draws = _bootstrap_chunk(clusters, statistic, rng, label, 0, resamples)
    else:
        bounds = np.linspace(0, resamples, workers + 1, dtype=int)
        draws = np.empty(resamples, dtype=float)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                (lo, pool.submit(_bootstrap_chunk, clusters, statistic, rng, label, int(lo), int(hi)))
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for lo, fut in futures:
                chunk = fut.result()
                draws[lo : lo + chunk.size] = chunk

    lo, hi = np.percentile(draws, [2.5, 97.5])
    frac_le = float(np.mean(draws <= 0.0))
    frac_ge = float(np.mean(draws >= 0.0))
    p = min(1.0, 2.0 * min(frac_le, frac_ge))
    return Estimate(
        point=point,
        ci_low=float(lo),
        ci_high=float(hi),
        p_value=p,
        n=len(clusters),
        method=f"bootstrap_percentile[{resamples}]",
    )


def binomial_test(k: int, n: int, p0: float = 0.5) -> Estimate:
    """Exact two-sided binomial test with a Clopper-Pearson 95% interval."""
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if n == 0:
        raise NotComputableError("binomial test needs n >= 1")
    result = sps.binomtest(k, n, p0)
    ci = result.proportion_ci(confidence_level=0.95, method="exact")
    return Estimate(
        point=k / n,
        ci_low=float(ci.low),
        ci_high=float(ci.high),
        p_value=float(result.pvalue),
        n=n,
        method=f"binomial_exact[p0={p0:g}]",
    )


def pearson(x: Sequence[float], y: Sequence[float]) -> Estimate:
    """Pearson correlation with the t-transform p-value and Fisher-z interval."""
    xa = np.asarray(list(x), dtype=float)
    ya = np.asarray(list(y), dtype=float)
    if xa.size != ya.size:
        raise ValueError("x and y must have equal length")
    n = int(xa.size)
    if n < 3:
        raise NotComputableError(f"pearson needs n >= 3, got {n}")
    if xa.std() == 0.0 or ya.std() == 0.0:
        raise DegenerateVarianceError("pearson: an input has zero variance")
    r, p = sps.pearsonr(xa, ya)
    r = float(r)
    if n > 3 and abs(r) < 1.0:
        z = math.atanh(r)
        half = 1.959963984540054 / math.sqrt(n - 3)
        lo, hi = math.tanh(z - half), math.tanh(z + half)
    else:
        lo, hi = r, r
    return Estimate(point=r, ci_low=lo, ci_high=hi, p_value=float(p), n=n, method="pearson")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LogisticFit:
    """Single-covariate logistic fit on within-unit demeaned values.

    The covariate is demeaned inside each unit before fitting, so the
    coefficient is identified from within-unit variation only.
    """

    coefficient: float
    intercept: float
    n_obs: int
    n_units: int
    iterations: int

    @property
    def base_probability(self) -> float:
        """Predicted success probability at the unit-mean covariate value."""
        return float(_sigmoid(np.array([self.intercept]))[0])

    def predict(self, demeaned_value: float) -> float:
        return float(_sigmoid(np.array([self.intercept + self.coefficient * demeaned_value]))[0])

    def odds_ratio(self, gap: float) -> float:
        return math.exp(self.coefficient * gap)

    def lift_pp(self, gap: float, at: str = "half") -> float:
        """Percentage-point success lift for a covariate gap.

        ``at="half"`` evaluates the marginal effect at p = 0.5 (slope 0.25);
        ``at="mean"`` evaluates it at the fitted base probability.
        """
        if at == "half":
            slope = 0.25
        elif at == "mean":
            p = self.base_probability
            slope = p * (1.0 - p)
        else:
            raise ValueError(f"unknown evaluation point {at!r}")
        return slope * self.coefficient * gap * 100.0


def logistic_demeaned(
    observations: Sequence[tuple[Hashable, float, bool]],
    tol: float = 1e-8,
    max_iter: int = 200,
) -> LogisticFit:
    """Fit success on within-unit demeaned covariate by Newton/IRLS.

    ``observations`` are (unit_key, covariate, success) triples. Iterates to
    convergence (absolute coefficient change below ``tol``); reports perfect
    separation instead of returning a diverged fit.
    """
    if not observations:
        raise NotComputableError("logistic fit needs observations")
    sums: dict[Hashable, list[float]] = {}
    for key, value, _ in observations:
        acc = sums.setdefault(key, [0.0, 0])
        acc[0] += value
        acc[1] += 1
    means = {key: s / c for key, (s, c) in sums.items()}

    x = np.array([v - means[k] for k, v, _ in observations], dtype=float)
    y = np.array([1.0 if s else 0.0 for _, _, s in observations], dtype=float)
    if float(np.ptp(y)) == 0.0:
        raise SeparationError("outcome is constant; coefficient unidentified")
    if float(x.std()) == 0.0:
        raise DegenerateVarianceError("demeaned covariate has zero variance")

    X = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    for iteration in range(1, max_iter + 1):
        p = _sigmoid(X @ beta)
        w = p * (1.0 - p)
        if float(w.max()) < 1e-12:
            raise SeparationError("fitted probabilities collapsed to 0/1")
        grad = X.T @ (y - p)
        hess = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix during fit") from None
        beta = beta + step
        if abs(beta[1]) > 50.0:
            raise SeparationError("coefficient diverged; data are separated")
        if abs(step[1]) < tol:
            return LogisticFit(
                coefficient=float(beta[1]),
                intercept=float(beta[0]),
                n_obs=len(observations),
                n_units=len(means),
                iterations=iteration,
            )
    raise SeparationError(f"no convergence after {max_iter} iterations")


@dataclass(frozen=True)
class FEGroup:
    """One fixed-effect group (a trajectory) with its clustering key (a unit)."""

    group_key: Hashable
    cluster_key: Hashable
    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("x and y must have equal length within a group")


@dataclass(frozen=True)
class FeLpmResult:
    beta: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    n_pairs: int
    n_groups: int
    n_clusters: int

    def as_estimate(self) -> Estimate:
        return Estimate(
            point=self.beta,
            ci_low=self.ci_low,
            ci_high=self.ci_high,
            p_value=self.p_value,
            n=self.n_pairs,
            method="fe_lpm_clustered",
        )


def fe_lpm(groups: Sequence[FEGroup]) -> FeLpmResult:
    """Linear probability model with group fixed effects.

    Both variables are demeaned within each group, giving the closed-form
    within estimator beta = sum(x~ y~) / sum(x~^2). Uncertainty is
    cluster-robust at ``cluster_key`` level with a G/(G-1) small-sample
    factor and t(G-1) critical values.
    """
    groups = [g for g in groups if len(g.x) > 0]
    if len(groups) < 2:
        raise NotComputableError("fe_lpm needs pairs from >= 2 groups")

    sxx = 0.0
    sxy = 0.0
    demeaned: list[tuple[Hashable, np.ndarray, np.ndarray]] = []
    n_pairs = 0
    for g in groups:
        gx = np.asarray(g.x, dtype=float)
        gy = np.asarray(g.y, dtype=float)
        gx = gx - gx.mean()
        gy = gy - gy.mean()
        demeaned.append((g.cluster_key, gx, gy))
        sxx += float(gx @ gx)
        sxy += float(gx @ gy)
        n_pairs += gx.size
    if sxx == 0.0:
        raise DegenerateVarianceError(
            "regressor is constant within every group; fixed effects absorb it"
        )
    beta = sxy / sxx

    scores: dict[Hashable, float] = {}
    for cluster, gx, gy in demeaned:
        resid = gy - beta * gx
        scores[cluster] = scores.get(cluster, 0.0) + float(gx @ resid)
    n_clusters = len(scores)
    if n_clusters < 2:
        raise NotComputableError("clustered inference needs >= 2 clusters")
    meat = sum(s * s for _, s in sorted(scores.items(), key=lambda kv: str(kv[0])))
    correction = n_clusters / (n_clusters - 1)
    var = correction * meat / (sxx * sxx)
    se = math.sqrt(var)
    df = n_clusters - 1
    if se == 0.0:
        p = 0.0 if beta != 0.0 else 1.0
        half = 0.0
    else:
        p = 2.0 * float(sps.t.sf(abs(beta / se), df))
        half = float(sps.t.ppf(0.975, df)) * se
    return FeLpmResult(
        beta=beta,
        se=se,
        ci_low=beta - half,
        ci_high=beta + half,
        p_value=min(p, 1.0),
        n_pairs=n_pairs,
        n_groups=len(groups),
        n_clusters=n_clusters,
    )
