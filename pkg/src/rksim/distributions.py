"""Latency and workload distributions.

Every distribution exposes sample(rng) returning a float and, where it is
well defined, percentile(p). Distributions are described in config files as
small dicts and built through from_config().
"""

from __future__ import annotations

import math
from statistics import NormalDist

_STD_NORMAL = NormalDist()


class Constant:
    """Degenerate distribution, always returns the same value."""

    def __init__(self, value: float):
        if value < 0:
            raise ValueError("constant distribution value must be >= 0")
        self.value = float(value)

    def sample(self, rng) -> float:
        return self.value

    def percentile(self, p: float) -> float:
        return self.value

    def __repr__(self):
        return f"Constant({self.value})"


class Uniform:
    def __init__(self, lo: float, hi: float):
        if hi < lo:
            raise ValueError("uniform distribution needs lo <= hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def sample(self, rng) -> float:
        return rng.uniform(self.lo, self.hi)

    def percentile(self, p: float) -> float:
        return self.lo + (self.hi - self.lo) * p

    def __repr__(self):
        return f"Uniform({self.lo}, {self.hi})"


class LogNormal:
    """Lognormal parameterized by its median and the sigma of log(X)."""

    def __init__(self, median: float, sigma: float):
        if median <= 0 or sigma <= 0:
            raise ValueError("lognormal needs median > 0 and sigma > 0")
        self.median = float(median)
        self.sigma = float(sigma)
        self._mu = math.log(median)

    def sample(self, rng) -> float:
        return rng.lognormvariate(self._mu, self.sigma)

    def percentile(self, p: float) -> float:
        return math.exp(self._mu + self.sigma * _STD_NORMAL.inv_cdf(p))

    @classmethod
    def from_p99(cls, p99: float, median_ratio: float = 8.0) -> "LogNormal":
        """Build a lognormal whose 99th percentile lands on p99.

        The median is pinned at p99 / median_ratio and sigma follows from
        the fixed ratio between the two quantiles.
        """
        if p99 <= 0 or median_ratio <= 1:
            raise ValueError("p99 must be > 0 and median_ratio > 1")
        z99 = _STD_NORMAL.inv_cdf(0.99)
        return cls(p99 / median_ratio, math.log(median_ratio) / z99)

    def __repr__(self):
        return f"LogNormal(median={self.median}, sigma={self.sigma})"


class Quantile:
    """Piecewise-linear inverse CDF through fixed (probability, value) anchors.

    Beyond the last anchor the tail is exponential with the given mean, so
    draws above the highest pinned percentile stay heavy-tailed. Sampling by
    inverse transform reproduces each anchored percentile exactly in the
    large-sample limit.
    """

    def __init__(self, anchors: list[tuple[float, float]], tail_mean: float = 0.0):
        if len(anchors) < 2:
            raise ValueError("quantile distribution needs at least two anchors")
        probs = [p for p, _ in anchors]
        vals = [v for _, v in anchors]
        if probs[0] != 0.0:
            raise ValueError("first anchor must be at probability 0")
        if any(b <= a for a, b in zip(probs, probs[1:])):
            raise ValueError("anchor probabilities must be strictly increasing")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("anchor values must be non-decreasing")
        if probs[-1] >= 1.0:
            raise ValueError("last anchor probability must be < 1")
        if tail_mean < 0:
            raise ValueError("tail_mean must be >= 0")
        self.anchors = [(float(p), float(v)) for p, v in anchors]
        self.tail_mean = float(tail_mean)

    def percentile(self, p: float) -> float:
        if not 0.0 <= p < 1.0:
            raise ValueError("percentile needs 0 <= p < 1")
        probs = [a[0] for a in self.anchors]
        last_p, last_v = self.anchors[-1]
        if p >= last_p:
            if self.tail_mean == 0.0:
                return last_v
            # exponential tail conditioned on exceeding the last anchor
            return last_v + self.tail_mean * math.log((1.0 - last_p) / (1.0 - p))
        # find the segment containing p
        for i in range(len(probs) - 1):
            p0, v0 = self.anchors[i]
            p1, v1 = self.anchors[i + 1]
            if p0 <= p <= p1:
                frac = (p - p0) / (p1 - p0)
                return v0 + frac * (v1 - v0)
        return last_v

    def sample(self, rng) -> float:
        return self.percentile(rng.random())

    def __repr__(self):
        return f"Quantile({self.anchors}, tail_mean={self.tail_mean})"


def from_config(spec) -> object:
    """Build a distribution from its config dict (or passthrough a number)."""
    if isinstance(spec, (int, float)):
        return Constant(spec)
    if not isinstance(spec, dict) or "dist" not in spec:
        raise ValueError(f"distribution spec needs a 'dist' key: {spec!r}")
    kind = spec["dist"]
    if kind == "constant":
        return Constant(spec["value"])
    if kind == "uniform":
        return Uniform(spec["lo"], spec["hi"])
    if kind == "lognormal":
        if "p99" in spec:
            return LogNormal.from_p99(spec["p99"], spec.get("median_ratio", 8.0))
        return LogNormal(spec["median"], spec["sigma"])
    if kind == "quantile":
        anchors = [(float(p), float(v)) for p, v in spec["anchors"]]
        return Quantile(anchors, spec.get("tail_mean", 0.0))
    raise ValueError(f"unknown distribution kind {kind!r}")
