"""Motion models: forward dynamics, tilt functionals, tilted dynamics.

Each model bundles a sampler for the plain dynamics, a multiplicative path
functional evaluated as segment ratios, a sampler for the tilted dynamics,
and a zero-set flag for functionals that can be absorbed at zero.  Presets:

* plain Brownian motion (functional identically 1, tilted = plain);
* Brownian motion with an exponential drift tilt exp(lam*X_t - lam^2 t/2),
  under which the tilted motion gains drift lam;
* Brownian motion absorbed at the origin via the harmonic transform
  X_{t ^ H0}/x0 * 1{H0 > t}, tilted motion a three-dimensional Bessel process;
* finite-state chains (continuous or discrete time), functional 1 or an
  eigen-martingale built from a per-state exponential weight.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass

import numpy as np

from .core import PathSegment
from .reports import EstimateReport


# ---------------------------------------------------------------------------
# Path samplers (one per simulated particle; record every generated sample)
# ---------------------------------------------------------------------------

class PathSampler:
    """Sequentially samples one particle's position at increasing times."""

    def __init__(self, x: float, t0: float, absorbed_at: float | None = None):
        self.samples: list[tuple[float, float]] = [(t0, float(x))]
        self.absorbed_at = absorbed_at

    @property
    def time(self) -> float:
        return self.samples[-1][0]

    @property
    def position(self) -> float:
        return self.samples[-1][1]

    def advance(self, t: float) -> float:
        if t < self.time:
            raise ValueError("path samplers only move forward in time")
        if t == self.time:
            return self.position
        x = self._step(t)
        self.samples.append((t, x))
        return x

    def _step(self, t: float) -> float:
        raise NotImplementedError


class _BrownianSampler(PathSampler):
    def __init__(self, x, t0, rng, drift=0.0, absorbed_at=None):
        super().__init__(x, t0, absorbed_at)
        self.rng = rng
        self.drift = drift

    def _step(self, t: float) -> float:
        dt = t - self.time
        return self.position + self.drift * dt + math.sqrt(dt) * self.rng.standard_normal()


class _AbsorbedBrownianSampler(PathSampler):
    """Plain Brownian motion that tracks the first visit of its line to 0.

    Crossings inside a step are detected exactly through the Brownian-bridge
    minimum law and flagged at the step's right endpoint.
    """

    def __init__(self, x, t0, rng, absorbed_at=None):
        super().__init__(x, t0, absorbed_at)
        self.rng = rng
        if absorbed_at is None and x <= 0.0:
            self.absorbed_at = t0

    def _step(self, t: float) -> float:
        dt = t - self.time
        a = self.position
        b = a + math.sqrt(dt) * self.rng.standard_normal()
        if self.absorbed_at is None:
            if b <= 0.0:
                self.absorbed_at = t
            elif self.rng.random() < math.exp(-2.0 * a * b / dt):
                self.absorbed_at = t
        return b


class _BesselSampler(PathSampler):
    """Three-dimensional Bessel process via the radial part of 3-d BM."""

    def __init__(self, x, t0, rng, absorbed_at=None):
        super().__init__(x, t0, absorbed_at)
        self.rng = rng

    def _step(self, t: float) -> float:
        dt = t - self.time
        z = self.rng.standard_normal(3) * math.sqrt(dt)
        return math.hypot(self.position + z[0], z[1], z[2])


class _ChainSampler(PathSampler):
    """Continuous-time jump chain; records a sample at every jump."""

    def __init__(self, x, t0, rng, hold_rates, jump_probs, absorbed_at=None):
        super().__init__(x, t0, absorbed_at)
        self.rng = rng
        self.hold_rates = hold_rates
        self.jump_cum = np.cumsum(jump_probs, axis=1)

    def advance(self, t: float) -> float:
        if t < self.time:
            raise ValueError("path samplers only move forward in time")
        while True:
            state = int(self.position)
            rate = self.hold_rates[state]
            if rate <= 0.0:
                break
            dt = self.rng.exponential(1.0 / rate)
            if self.time + dt > t:
                break
            jump_time = self.time + dt
            u = self.rng.random()
            nxt = int(np.searchsorted(self.jump_cum[state], u, side="right"))
            nxt = min(nxt, self.jump_cum.shape[1] - 1)
            self.samples.append((jump_time, float(nxt)))
        if t > self.time:
            self.samples.append((t, self.position))
        return self.position


# ---------------------------------------------------------------------------
# Perron pair by power iteration
# ---------------------------------------------------------------------------

def perron_pair(matrix: np.ndarray, tol: float = 1e-14, max_iter: int = 100_000):
    """Dominant eigenvalue and positive right eigenvector of a nonnegative
    irreducible matrix, by power iteration."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("need a square matrix")
    if (m < 0).any():
        raise ValueError("need a nonnegative matrix")
    n = m.shape[0]
    h = np.full(n, 1.0 / n)
    rho = 1.0
    for _ in range(max_iter):
        nxt = m @ h
        rho = float(nxt.sum())
        if rho <= 0.0:
            raise ValueError("matrix is not irreducible on positive vectors")
        nxt /= rho
        if float(np.max(np.abs(nxt - h))) < tol:
            h = nxt
            break
        h = nxt
    resid = float(np.max(np.abs(m @ h - rho * h)))
    if resid > 1e-12 * max(1.0, rho):
        raise ValueError(f"power iteration did not converge (residual {resid})")
    return rho, h / h[0]


# ---------------------------------------------------------------------------
# Continuous-time motion models
# ---------------------------------------------------------------------------

class MotionModel:
    """Interface shared by the continuous-time presets."""

    kind = "diffusion"
    default_origin = 0.0

    @property
    def step_paths(self) -> bool:
        return self.kind == "chain"

    @property
    def zeta_trivial(self) -> bool:
        """True when the tilt functional is identically 1."""
        return False

    def path_sampler(
        self, x: float, t0: float, rng: np.random.Generator,
        *, tilted: bool = False, absorbed_at: float | None = None,
    ) -> PathSampler:
        raise NotImplementedError

    def zeta_segment_ratio(self, seg: PathSegment) -> float:
        """zeta(end)/zeta(start) along one particle segment; 0 after absorption."""
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class BrownianMotion(MotionModel):
    """Standard Brownian motion, optionally with an exponential drift tilt.

    With ``tilt_drift`` lam the functional is exp(lam*X_t - lam^2 t / 2) and
    the tilted dynamics is Brownian motion with drift lam.
    """

    tilt_drift: float | None = None

    @property
    def zeta_trivial(self) -> bool:
        return self.tilt_drift is None

    def path_sampler(self, x, t0, rng, *, tilted=False, absorbed_at=None):
        drift = self.tilt_drift if (tilted and self.tilt_drift is not None) else 0.0
        return _BrownianSampler(x, t0, rng, drift=drift, absorbed_at=absorbed_at)

    def zeta_segment_ratio(self, seg: PathSegment) -> float:
        if self.tilt_drift is None:
            return 1.0
        lam = self.tilt_drift
        dx = seg.end_position - seg.start_position
        dt = seg.end_time - seg.start_time
        return math.exp(lam * dx - 0.5 * lam * lam * dt)

    def describe(self) -> str:
        if self.tilt_drift is None:
            return "brownian"
        return f"brownian/drift-tilt(lam={self.tilt_drift})"


@dataclass(frozen=True)
class AbsorbedBrownian(MotionModel):
    """Brownian motion carrying the harmonic functional absorbed at 0.

    The functional of a line started at x0 > 0 is X_{t ^ H0}/x0 * 1{H0 > t};
    its segment ratio is the endpoint ratio while unabsorbed and 0 afterwards.
    The tilted dynamics is the three-dimensional Bessel process.
    """

    default_origin = 1.0

    def path_sampler(self, x, t0, rng, *, tilted=False, absorbed_at=None):
        if tilted:
            if x <= 0.0:
                raise ValueError("tilted dynamics needs a positive start")
            return _BesselSampler(x, t0, rng, absorbed_at=absorbed_at)
        return _AbsorbedBrownianSampler(x, t0, rng, absorbed_at=absorbed_at)

    def zeta_segment_ratio(self, seg: PathSegment) -> float:
        if seg.absorbed_by(seg.end_time):
            return 0.0
        return seg.end_position / seg.start_position

    def describe(self) -> str:
        return "brownian/absorbed"


@dataclass(frozen=True)
class ContinuousChain(MotionModel):
    """Finite-state chain with rate matrix, functional 1 or an eigen-tilt.

    The eigen-tilt multiplies exp(theta * integral of score(X_s) ds) by
    h(X_t) e^{-lam t} / h(X_0), where (lam, h) solves
    (rates + theta*diag(score)) h = lam h, so the functional has unit mean;
    the tilted chain jumps x -> y at rate rates[x, y] h[y] / h[x].
    """

    rates: tuple[tuple[float, ...], ...]
    tilt_theta: float | None = None
    tilt_score: tuple[float, ...] | None = None

    kind = "chain"

    def __post_init__(self):
        a = np.asarray(self.rates, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("rate matrix must be square")
        off = a - np.diag(np.diag(a))
        if (off < 0).any():
            raise ValueError("off-diagonal rates must be nonnegative")
        if np.max(np.abs(a.sum(axis=1))) > 1e-10:
            raise ValueError("rate matrix rows must sum to 0")
        object.__setattr__(self, "_a", a)
        n = a.shape[0]
        if self.tilt_theta is not None:
            score = np.asarray(
                self.tilt_score if self.tilt_score is not None else np.arange(n),
                dtype=np.float64,
            )
            gen = a + self.tilt_theta * np.diag(score)
            shift = float(np.max(np.abs(np.diag(gen)))) + 1.0
            rho_shift, h = perron_pair(gen + shift * np.eye(n))
            object.__setattr__(self, "_score", score)
            object.__setattr__(self, "_lam", rho_shift - shift)
            object.__setattr__(self, "_h", h)
            q_rates = off * h[None, :] / h[:, None]
        else:
            q_rates = off

        def normalize(rates):
            hold = rates.sum(axis=1)
            safe = np.where(hold > 0, hold, 1.0)
            return hold, rates / safe[:, None]

        p_hold, p_probs = normalize(off)
        q_hold, q_probs = normalize(q_rates)
        object.__setattr__(self, "_p_hold", p_hold)
        object.__setattr__(self, "_p_probs", p_probs)
        object.__setattr__(self, "_q_hold", q_hold)
        object.__setattr__(self, "_q_probs", q_probs)

    @property
    def n_states(self) -> int:
        return self._a.shape[0]

    @property
    def zeta_trivial(self) -> bool:
        return self.tilt_theta is None

    def path_sampler(self, x, t0, rng, *, tilted=False, absorbed_at=None):
        if tilted and self.tilt_theta is not None:
            return _ChainSampler(x, t0, rng, self._q_hold, self._q_probs, absorbed_at)
        return _ChainSampler(x, t0, rng, self._p_hold, self._p_probs, absorbed_at)

    def zeta_segment_ratio(self, seg: PathSegment) -> float:
        if self.tilt_theta is None:
            return 1.0
        score_int = 0.0
        for i in range(len(seg.times) - 1):
            score_int += self._score[int(seg.positions[i])] * (seg.times[i + 1] - seg.times[i])
        x0 = int(seg.start_position)
        x1 = int(seg.end_position)
        dt = seg.end_time - seg.start_time
        return math.exp(self.tilt_theta * score_int - self._lam * dt) * self._h[x1] / self._h[x0]

    def describe(self) -> str:
        tag = "" if self.tilt_theta is None else f"/eigen-tilt(theta={self.tilt_theta})"
        return f"chain-ct({self.n_states} states){tag}"


# ---------------------------------------------------------------------------
# Discrete-time chains (used by the generation-indexed simulators/oracles)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteChain:
    """Row-stochastic transition matrix, functional 1 or an eigen-tilt.

    The eigen-tilt is built from per-state weights w = exp(theta * score):
    with (rho, h) the Perron pair of transition * diag(w), the functional
    prod_{i<=n} w(X_i) * h(X_n) rho^{-n} / h(X_0) is a unit-mean martingale,
    the tilted kernel is transition * w * h / (rho * h), and one edge x -> y
    multiplies the functional by w(y) h(y) / (rho h(x)).  theta = 0 recovers
    the trivial functional.
    """

    transition: tuple[tuple[float, ...], ...]
    tilt_theta: float | None = None
    tilt_score: tuple[float, ...] | None = None

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("transition matrix must be square")
        if (p < 0).any():
            raise ValueError("transition probabilities must be nonnegative")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-10:
            raise ValueError("transition rows must sum to 1")
        object.__setattr__(self, "_p", p)
        n = p.shape[0]
        if self.tilt_theta is not None:
            score = np.asarray(
                self.tilt_score if self.tilt_score is not None else np.arange(n),
                dtype=np.float64,
            )
            w = np.exp(self.tilt_theta * score)
            rho, h = perron_pair(p * w[None, :])
            q = p * (w * h)[None, :] / (rho * h[:, None])
            rowsum = q.sum(axis=1)
            if np.max(np.abs(rowsum - 1.0)) > 1e-10:
                raise ValueError("tilted kernel rows failed to normalize")
            object.__setattr__(self, "_w", w)
            object.__setattr__(self, "_rho", rho)
            object.__setattr__(self, "_h", h)
            object.__setattr__(self, "_q", q / rowsum[:, None])
        else:
            object.__setattr__(self, "_q", p)
        object.__setattr__(self, "_p_cum", np.cumsum(self._p, axis=1))
        object.__setattr__(self, "_q_cum", np.cumsum(self._q, axis=1))

    @property
    def n_states(self) -> int:
        return self._p.shape[0]

    @property
    def zeta_trivial(self) -> bool:
        return self.tilt_theta is None

    @property
    def p_matrix(self) -> np.ndarray:
        return self._p.copy()

    @property
    def q_matrix(self) -> np.ndarray:
        return self._q.copy()

    @property
    def edge_weight_matrix(self) -> np.ndarray:
        """Inverse functional increments, entry (x, y) for the edge x -> y."""
        n = self.n_states
        out = np.empty((n, n))
        for x in range(n):
            for y in range(n):
                out[x, y] = self.weight_edge_factor(x, y)
        return out

    def p_prob(self, x: int, y: int) -> float:
        return float(self._p[x, y])

    def q_prob(self, x: int, y: int) -> float:
        return float(self._q[x, y])

    def sample_p(self, x: int, rng: np.random.Generator) -> int:
        idx = int(np.searchsorted(self._p_cum[x], rng.random(), side="right"))
        return min(idx, self.n_states - 1)

    def sample_q(self, x: int, rng: np.random.Generator) -> int:
        idx = int(np.searchsorted(self._q_cum[x], rng.random(), side="right"))
        return min(idx, self.n_states - 1)

    def zeta_edge_ratio(self, x: int, y: int) -> float:
        """Multiplicative increment of the functional over one generation."""
        if self.tilt_theta is None:
            return 1.0
        return float(self._w[y] * self._h[y] / (self._rho * self._h[x]))

    def weight_edge_factor(self, x: int, y: int) -> float:
        """Inverse edge increment, as it enters the skeleton weight."""
        return 1.0 / self.zeta_edge_ratio(x, y)

    def describe(self) -> str:
        tag = "" if self.tilt_theta is None else f"/eigen-tilt(theta={self.tilt_theta})"
        return f"chain-dt({self.n_states} states){tag}"


# ---------------------------------------------------------------------------
# Unit-mean check of the tilt functional
# ---------------------------------------------------------------------------

def martingale_check(
    model: MotionModel,
    t: float,
    replicates: int,
    seed: int,
    x0: float | None = None,
) -> EstimateReport:
    """Simulate the plain dynamics and average the functional at time t.

    The report covers 1 at the 99% level when the functional has unit mean;
    a trivial functional yields a zero-width interval at exactly 1.
    """
    if t <= 0:
        raise ValueError("need t > 0")
    if replicates < 100:
        raise ValueError("need at least 100 replicates")
    start = x0 if x0 is not None else model.default_origin
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    tic = _time.perf_counter()
    values = np.empty(replicates)
    for i in range(replicates):
        sampler = model.path_sampler(start, 0.0, rng)
        sampler.advance(t)
        seg = PathSegment(
            tuple(s[0] for s in sampler.samples),
            tuple(s[1] for s in sampler.samples),
            sampler.absorbed_at,
        )
        values[i] = model.zeta_segment_ratio(seg)
    return EstimateReport.from_values(
        f"martingale-check/{model.describe()}", values, seed,
        wall_time=_time.perf_counter() - tic,
    )
