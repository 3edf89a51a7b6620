"""Batch-wise packet loss models.

A batch-wise model is a row-stochastic table q(r|m): the probability that
r packets arrive when m are sent on a link. Closed form for independent
loss, empirical estimation for the two-state bursty channel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class GEParams:
    """Two-state channel: per-packet success probabilities and transitions."""

    s_good: float
    s_bad: float
    p_gb: float
    p_bg: float

    def __post_init__(self):
        for name in ("s_good", "s_bad"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name}={v} outside [0,1]")
        for name in ("p_gb", "p_bg"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ParameterError(f"{name}={v} outside (0,1]")

    def steady_state(self):
        pi_g = self.p_bg / (self.p_gb + self.p_bg)
        return pi_g, 1.0 - pi_g

    def average_loss_rate(self):
        pi_g, pi_b = self.steady_state()
        return 1.0 - pi_g * self.s_good - pi_b * self.s_bad


class GEChannel:
    """Stateful channel instance; single-owner, advanced one packet at a time."""

    GOOD = "G"
    BAD = "B"

    def __init__(self, params: GEParams, state: str = GOOD):
        if state not in (self.GOOD, self.BAD):
            raise ParameterError(f"bad state {state!r}")
        self.params = params
        self.state = state

    def reset_from_steady_state(self, rng):
        pi_g, _ = self.params.steady_state()
        self.state = self.GOOD if rng.random() < pi_g else self.BAD

    def step(self, rng):
        """Transmit one packet: success from the current state, then transition."""
        p = self.params
        good = self.state == self.GOOD
        received = rng.random() < (p.s_good if good else p.s_bad)
        if rng.random() < (p.p_gb if good else p.p_bg):
            self.state = self.BAD if good else self.GOOD
        return received, self.state


@dataclass(frozen=True)
class LossSpec:
    """Link loss description: independent(epsilon) or gilbert_elliott(params)."""

    kind: str
    epsilon: float = 0.0
    ge: GEParams | None = None

    def __post_init__(self):
        if self.kind == "independent":
            if not 0.0 <= self.epsilon < 1.0:
                raise ParameterError(f"epsilon={self.epsilon} outside [0,1)")
        elif self.kind == "gilbert_elliott":
            if self.ge is None:
                raise ParameterError("gilbert_elliott spec needs GE parameters")
        else:
            raise ParameterError(f"unknown loss kind {self.kind!r}")

    @property
    def average_loss_rate(self):
        if self.kind == "independent":
            return self.epsilon
        return self.ge.average_loss_rate()

    @staticmethod
    def independent(epsilon):
        return LossSpec(kind="independent", epsilon=epsilon)

    @staticmethod
    def gilbert_elliott(s_good, s_bad, p_gb, p_bg):
        return LossSpec(kind="gilbert_elliott",
                        ge=GEParams(s_good, s_bad, p_gb, p_bg))


@dataclass
class BatchLossModel:
    """q(r|m) table for m,r in 0..m_max; rows sum to one."""

    m_max: int
    q_table: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.q_table = np.asarray(self.q_table, dtype=float)
        if self.q_table.shape != (self.m_max + 1, self.m_max + 1):
            raise ParameterError(
                f"q_table shape {self.q_table.shape} != {(self.m_max + 1,) * 2}")
        sums = self.q_table.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ParameterError(f"row {bad} sums to {sums[bad]}, not 1")
        upper = np.triu(self.q_table, k=1)
        if np.any(upper > 0):
            raise ParameterError("q(r|m) > 0 for r > m")

    def prob(self, r, m):
        return float(self.q_table[m, r])

    def to_json(self):
        return json.dumps({"m_max": self.m_max, "rows": self.q_table.tolist()})

    @staticmethod
    def from_json(doc):
        data = json.loads(doc)
        return BatchLossModel(m_max=int(data["m_max"]),
                              q_table=np.array(data["rows"], dtype=float))


def independent_loss_model(epsilon, m_max):
    """Binomial arrivals: q(r|m) = C(m,r)(1-eps)^r eps^(m-r)."""
    if not 0.0 <= epsilon < 1.0:
        raise ParameterError(f"epsilon={epsilon} outside [0,1)")
    if m_max < 1:
        raise ParameterError("m_max must be >= 1")
    tab = np.zeros((m_max + 1, m_max + 1))
    for m in range(m_max + 1):
        for r in range(m + 1):
            tab[m, r] = math.comb(m, r) * (1 - epsilon) ** r * epsilon ** (m - r)
        tab[m, :m + 1] /= tab[m, :m + 1].sum()
    return BatchLossModel(m_max=m_max, q_table=tab)


def _ge_burst_counts(params, m, n, rng):
    """Received counts for n independent m-packet bursts (run-length sampling).

    Equivalent in distribution to stepping the chain packet by packet:
    within a run the state is constant so arrivals are binomial, and run
    lengths are geometric in the leave probability.
    """
    pi_g, _ = params.steady_state()
    out = np.zeros(n, dtype=np.int64)
    for s in range(n):
        good = rng.random() < pi_g
        left = m
        recv = 0
        while left > 0:
            p_leave = params.p_gb if good else params.p_bg
            run = int(rng.geometric(p_leave))
            use = min(run, left)
            succ = params.s_good if good else params.s_bad
            if succ >= 1.0:
                recv += use
            elif succ > 0.0:
                recv += int(rng.binomial(use, succ))
            left -= use
            good = not good
        out[s] = recv
    return out


def _ge_paths(params, n, length, rng):
    """n arrival paths of `length` packets each, states carried within a path."""
    pi_g, _ = params.steady_state()
    Z = np.zeros((n, length), dtype=np.int8)
    for s in range(n):
        good = rng.random() < pi_g
        pos = 0
        while pos < length:
            p_leave = params.p_gb if good else params.p_bg
            run = min(int(rng.geometric(p_leave)), length - pos)
            succ = params.s_good if good else params.s_bad
            if succ >= 1.0:
                Z[s, pos:pos + run] = 1
            elif succ > 0.0:
                Z[s, pos:pos + run] = rng.random(run) < succ
            pos += run
            good = not good
    return Z


def _bernoulli_paths(epsilon, n, length, rng):
    return (rng.random((n, length)) < (1.0 - epsilon)).astype(np.int8)


def empirical_loss_model(spec, m_max=100, samples=10000, rng_seed=0,
                         stationarize=False):
    """Estimate q(r|m) by simulating packet bursts.

    Default: for each m, `samples` independent m-packet bursts (channel
    state carried within a burst, drawn from the steady state across
    bursts) and q(.|m) is the per-m histogram.

    stationarize=True instead samples `samples` paths of length m_max and
    histograms every cyclic window of length m per path. The resulting
    empirical process is shift-invariant by construction, so the derived
    per-hop expected-rank curves are exactly monotone and concave; use
    this for models that feed the per-hop recoding optimizer.
    """
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    if m_max < 1:
        raise ParameterError("m_max must be >= 1")
    rng = np.random.default_rng(rng_seed)
    tab = np.zeros((m_max + 1, m_max + 1))
    tab[0, 0] = 1.0
    if stationarize:
        if spec.kind == "independent":
            Z = _bernoulli_paths(spec.epsilon, samples, m_max, rng)
        else:
            Z = _ge_paths(spec.ge, samples, m_max, rng)
        ZZ = np.concatenate([Z, Z], axis=1)
        C = np.zeros((samples, 2 * m_max + 1), dtype=np.int64)
        np.cumsum(ZZ, axis=1, out=C[:, 1:])
        offs = np.arange(m_max)
        for t in range(1, m_max + 1):
            sums = C[:, offs + t] - C[:, offs]
            tab[t, :t + 1] = np.bincount(sums.ravel(), minlength=t + 1) / sums.size
        return BatchLossModel(m_max=m_max, q_table=tab)
    for m in range(1, m_max + 1):
        if spec.kind == "independent":
            counts = rng.binomial(m, 1.0 - spec.epsilon, size=samples)
        else:
            counts = _ge_burst_counts(spec.ge, m, samples, rng)
        tab[m, :m + 1] = np.bincount(counts, minlength=m + 1) / samples
    return BatchLossModel(m_max=m_max, q_table=tab)


def complementary_cdf(model, i, t):
    """F(i|t) = P(at least i of t transmitted packets arrive)."""
    if not 0 <= t <= model.m_max:
        raise ParameterError(f"t={t} outside [0, {model.m_max}]")
    if i <= 0:
        return 1.0
    if i > t:
        return 0.0
    return float(model.q_table[t, i:].sum())


@dataclass
class MonotoneConcaveReport:
    monotone: bool
    concave: bool
    worst_monotone_violation: float
    worst_concavity_violation: float


def check_monotone_concave(model, M, q_field, tol=1e-6):
    """Test the per-hop expected-rank curves E_r(t) for every rank r <= M.

    Monotone: E_r(t+1) >= E_r(t) - tol. Concave: second differences
    <= tol. Reports the worst signed violations (positive = violated);
    empirical models are sampling-noisy, so the magnitudes matter more
    than the booleans.
    """
    from . import rankcalc

    E1 = rankcalc.expected_rank_table(model, q_field, M)
    worst_mono = 0.0
    worst_conc = 0.0
    for r in range(1, M + 1):
        d1 = np.diff(E1[r])
        worst_mono = max(worst_mono, float((-d1).max()))
        d2 = np.diff(d1)
        worst_conc = max(worst_conc, float(d2.max()))
    return MonotoneConcaveReport(
        monotone=worst_mono <= tol,
        concave=worst_conc <= tol,
        worst_monotone_violation=worst_mono,
        worst_concavity_violation=worst_conc,
    )
