"""Ensemble estimators, mergeable reductions, refinement studies and pass/fail reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int
    effective_n: float

    def z_score(self, expected: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean == expected else math.copysign(math.inf, self.mean - expected)
        return (self.mean - expected) / self.std_error


class WeightedAccumulator:
    """Sufficient statistics for ``k`` weighted means sharing one weight per path.

    Weights arrive as logs and are stored relative to the running maximum
    log weight, so huge or tiny densities never overflow.  Two accumulators
    merge exactly up to floating-point reassociation.
    """

    def __init__(self, k: int):
        self.k = k
        self.n = 0
        self.shift = -math.inf
        self.sw = 0.0
        self.sw2 = 0.0
        self.swx = np.zeros(k)
        self.sw2x = np.zeros(k)
        self.sw2x2 = np.zeros(k)

    def _rescale(self, new_shift: float) -> None:
        if self.n == 0:
            self.shift = new_shift
            return
        a = math.exp(self.shift - new_shift)
        self.sw *= a
        self.sw2 *= a * a
        self.swx *= a
        self.sw2x *= a * a
        self.sw2x2 *= a * a
        self.shift = new_shift

    def add(self, values, log_weights=None) -> WeightedAccumulator:
        x = np.asarray(values, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.k:
            raise ValueError(f"expected {self.k} statistics per path, got {x.shape[1]}")
        if log_weights is None:
            lw = np.zeros(x.shape[0])
        else:
            lw = np.asarray(log_weights, dtype=float)
            if lw.shape != (x.shape[0],):
                raise ValueError("one log weight per path is required")
            if not np.all(np.isfinite(lw)):
                raise ValueError("log weights must be finite")
        if x.shape[0] == 0:
            return self
        top = float(np.max(lw))
        if top > self.shift:
            self._rescale(top)
        w = np.exp(lw - self.shift)
        w2 = w * w
        self.n += x.shape[0]
        self.sw += float(np.sum(w))
        self.sw2 += float(np.sum(w2))
        self.swx += w @ x
        self.sw2x += w2 @ x
        self.sw2x2 += w2 @ (x * x)
        return self

    def merge(self, other: WeightedAccumulator) -> WeightedAccumulator:
        if other.k != self.k:
            raise ValueError("cannot merge accumulators of different width")
        out = self.copy()
        if other.n == 0:
            return out
        b = other.copy()
        top = max(out.shift, b.shift)
        out._rescale(top)
        b._rescale(top)
        out.n += b.n
        out.sw += b.sw
        out.sw2 += b.sw2
        out.swx += b.swx
        out.sw2x += b.sw2x
        out.sw2x2 += b.sw2x2
        return out

    def copy(self) -> WeightedAccumulator:
        c = WeightedAccumulator(self.k)
        c.n, c.shift, c.sw, c.sw2 = self.n, self.shift, self.sw, self.sw2
        c.swx, c.sw2x, c.sw2x2 = self.swx.copy(), self.sw2x.copy(), self.sw2x2.copy()
        return c

    @property
    def effective_n(self) -> float:
        return self.sw**2 / self.sw2 if self.sw2 > 0 else 0.0

    def weighted(self) -> list[Estimate]:
        """Self-normalized means with delta-method standard errors."""
        if self.n == 0 or self.sw <= 0:
            raise ValueError("no positive weight accumulated")
        mu = self.swx / self.sw
        var = (self.sw2x2 - 2.0 * mu * self.sw2x + mu * mu * self.sw2) / self.sw**2
        se = np.sqrt(np.maximum(var, 0.0))
        ess = self.effective_n
        return [Estimate(float(m), float(s), self.n, ess) for m, s in zip(mu, se)]

    def plain(self) -> list[Estimate]:
        """Plain means of ``w * x`` (not normalized by the weights)."""
        if self.n == 0:
            raise ValueError("empty accumulator")
        scale = math.exp(self.shift)
        mean = scale * self.swx / self.n
        second = scale * scale * self.sw2x2 / self.n
        se = np.sqrt(np.maximum(second - mean * mean, 0.0) / self.n)
        return [Estimate(float(m), float(s), self.n, float(self.n)) for m, s in zip(mean, se)]


def weighted_moments(values, weights=None, *, log_weights=None) -> Estimate:
    """Self-normalized importance-sampling mean of ``values``."""
    values = np.asarray(values, dtype=float).ravel()
    if weights is not None:
        if log_weights is not None:
            raise ValueError("give weights or log_weights, not both")
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != values.shape:
            raise ValueError("values and weights differ in length")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and non-negative")
        if not np.any(weights > 0):
            raise ValueError("all weights are zero")
        keep = weights > 0
        values, log_weights = values[keep], np.log(weights[keep])
    acc = WeightedAccumulator(1).add(values, log_weights)
    return acc.weighted()[0]


@dataclass
class RefinementStudy:
    levels: list[tuple[float, float]]
    order: float
    note: str = ""


def refinement_order(resolutions, residuals) -> RefinementStudy:
    """Least-squares slope of ``-log(residual)`` against ``log(resolution)``."""
    pairs = sorted(zip(map(float, resolutions), map(float, residuals)))
    if len(pairs) < 3:
        raise ValueError("a refinement study needs at least 3 levels")
    kept = [(r, e) for r, e in pairs if e > 0 and math.isfinite(e)]
    note = ""
    if len(kept) < len(pairs):
        note = f"excluded {len(pairs) - len(kept)} non-positive residual(s)"
    if len(kept) < 2:
        return RefinementStudy(pairs, math.nan, note or "too few positive residuals")
    x = np.log([r for r, _ in kept])
    y = np.log([e for _, e in kept])
    slope = np.polyfit(x, y, 1)[0]
    return RefinementStudy(pairs, float(-slope), note)


def battery_summary(z_scores, z_bound: float = 3.0) -> dict:
    """Max |z|, exceedance count, and what chance alone would give for this many probes."""
    z = np.abs(np.asarray(z_scores, dtype=float))
    n = z.size
    tail = 2.0 * norm.sf(z_bound)
    return {
        "n_probes": int(n),
        "max_abs_z": float(z.max()) if n else 0.0,
        "n_exceeding": int(np.sum(z > z_bound)),
        "expected_exceeding": float(n * tail),
        "bonferroni_z": float(norm.isf(tail / (2.0 * max(n, 1)))),
    }


@dataclass
class Check:
    name: str
    passed: bool
    status: str = ""
    details: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if not self.status:
            self.status = "pass" if self.passed else "fail"


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def to_dict(self) -> dict:
        return {"passed": self.passed, "metadata": self.metadata, "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)

    def to_text(self) -> str:
        width = max([len(c.name) for c in self.checks] + [5])
        lines = [f"{'check':<{width}}  {'status':<24}  summary"]
        for c in self.checks:
            summary = ", ".join(f"{k}={_fmt(v)}" for k, v in c.details.items())
            lines.append(f"{c.name:<{width}}  {c.status:<24}  {summary}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
