"""
Killed one-dimensional diffusions dX = dW - V(X) dt absorbed at a moving boundary h(t).

Provides closed-form Brownian first-passage baselines, scale function and
speed measure, and Monte Carlo estimators built on a vectorized Euler-Maruyama
scheme with a frozen-boundary Brownian bridge correction.

Paths are simulated in fixed-size blocks; block i draws from a Philox
generator keyed by (seed, stream, i), so estimates do not depend on the
number of worker threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, interpolate, stats

from src.exceptions import (
    DomainError,
    DriftTooStrongError,
    InvalidModelError,
    ModelError,
    ScheduleKindError,
    TooFewSurvivorsError,
)
from src.settings import PATH_BLOCK_SIZE

logger = logging.getLogger(__name__)

EXP_OVERFLOW = 700.0
DERIVATIVE_STEP = 1e-5
MIN_SURVIVORS = 100
QUAD_RELATIVE_ERROR = 1e-8
SCALE_GRID_POINTS = 513

DRIFT_KINDS = ("zero", "linear", "cubic_shifted", "power", "table")
BOUNDARY_KINDS = ("constant", "periodic", "decreasing")


@dataclass(frozen=True)
class Drift:
    """
    Drift V with derivative V' and potential G(y) = ∫_0^y V.

    Built-in kinds: zero, linear (V = coefficient·x), cubic_shifted
    (V = (x - c)^3), power (V = sign(x - c)|x - c|^alpha) and table (linear
    interpolation through `points`, constant beyond the ends).
    """

    kind: str
    coefficient: float = 1.0
    c: float = 0.0
    alpha: float = 3.0
    points: Optional[Tuple[Tuple[float, float], ...]] = None
    _nodes: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    _values: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    _potential: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise InvalidModelError(f"unknown drift kind {self.kind!r}")
        if self.kind == "power" and self.alpha <= 1:
            raise InvalidModelError("power drift requires alpha > 1")
        if self.kind != "table":
            return
        if not self.points or len(self.points) < 2:
            raise InvalidModelError("table drift requires at least two points")
        xs = np.array([p[0] for p in self.points], dtype=float)
        vs = np.array([p[1] for p in self.points], dtype=float)
        if np.any(np.diff(xs) <= 0):
            raise InvalidModelError("table drift abscissae must be strictly increasing")
        nodes = np.union1d(xs, [0.0])
        values = np.interp(nodes, xs, vs)
        potential = np.concatenate([[0.0], integrate.cumulative_trapezoid(values, nodes)])
        potential -= potential[np.searchsorted(nodes, 0.0)]
        object.__setattr__(self, "points", tuple((float(x), float(v)) for x, v in zip(xs, vs)))
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "_potential", potential)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "linear":
            return self.coefficient * x
        if self.kind == "cubic_shifted":
            return (x - self.c) ** 3
        if self.kind == "power":
            shifted = x - self.c
            return np.sign(shifted) * np.abs(shifted) ** self.alpha
        return np.interp(x, self._nodes, self._values)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "linear":
            return np.full_like(x, self.coefficient)
        if self.kind == "cubic_shifted":
            return 3.0 * (x - self.c) ** 2
        if self.kind == "power":
            return self.alpha * np.abs(x - self.c) ** (self.alpha - 1.0)
        return (self(x + DERIVATIVE_STEP) - self(x - DERIVATIVE_STEP)) / (2.0 * DERIVATIVE_STEP)

    def potential(self, y):
        """G(y) = ∫_0^y V(ξ) dξ"""
        y = np.asarray(y, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(y)
        if self.kind == "linear":
            return 0.5 * self.coefficient * y ** 2
        if self.kind == "cubic_shifted":
            return ((y - self.c) ** 4 - self.c ** 4) / 4.0
        if self.kind == "power":
            exponent = self.alpha + 1.0
            return (np.abs(y - self.c) ** exponent - abs(self.c) ** exponent) / exponent
        # piecewise quadratic integral of the interpolant, linear beyond the ends
        nodes, values, potential = self._nodes, self._values, self._potential
        index = np.clip(np.searchsorted(nodes, y, side="right") - 1, 0, len(nodes) - 2)
        left = nodes[index]
        slope = (values[index + 1] - values[index]) / (nodes[index + 1] - left)
        inside = potential[index] + values[index] * (y - left) + 0.5 * slope * (y - left) ** 2
        below = potential[0] + values[0] * (y - nodes[0])
        above = potential[-1] + values[-1] * (y - nodes[-1])
        return np.where(y < nodes[0], below, np.where(y > nodes[-1], above, inside))


@dataclass(frozen=True)
class Boundary:
    """
    Moving absorbing level h(t) with Lipschitz constant L and sup h.

    constant: h = level; periodic: h = base + amplitude·sin(2πt/period);
    decreasing: h = h0·exp(-rate·t).
    """

    kind: str
    level: float = 0.0
    base: float = 1.0
    amplitude: float = 0.0
    period: float = 1.0
    h0: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in BOUNDARY_KINDS:
            raise InvalidModelError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "constant" and self.level < 0:
            raise InvalidModelError("boundary level must be non-negative")
        if self.kind == "periodic" and (self.period <= 0 or self.amplitude < 0 or self.base < self.amplitude):
            raise InvalidModelError("periodic boundary needs period > 0 and 0 <= amplitude <= base")
        if self.kind == "decreasing" and (self.h0 < 0 or self.rate < 0):
            raise InvalidModelError("decreasing boundary needs h0 >= 0 and rate >= 0")

    @classmethod
    def constant(cls, level: float) -> "Boundary":
        return cls("constant", level=level)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.level)
        if self.kind == "periodic":
            return self.base + self.amplitude * np.sin(2.0 * math.pi * t / self.period)
        return self.h0 * np.exp(-self.rate * t)

    @property
    def lipschitz(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "periodic":
            return 2.0 * math.pi * self.amplitude / self.period
        return self.h0 * self.rate

    @property
    def h_max(self) -> float:
        if self.kind == "constant":
            return self.level
        if self.kind == "periodic":
            return self.base + self.amplitude
        return self.h0

    @property
    def limit_level(self) -> Optional[float]:
        """Level the boundary converges to, None for periodic boundaries"""
        if self.kind == "constant":
            return self.level
        if self.kind == "decreasing":
            return 0.0
        return None


@dataclass(frozen=True)
class DiffusionModel:
    drift: Drift
    boundary: Boundary
    dt: float
    horizon: float
    seed: int
    stream: int = 0
    bridge: bool = True
    x_cap: Optional[float] = None
    record_every: Optional[int] = None

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise InvalidModelError("dt and horizon must be positive")
        if self.record_every is not None and self.record_every < 1:
            raise InvalidModelError("record_every must be a positive integer")
        if self.x_cap is None:
            object.__setattr__(self, "x_cap", 50.0 * (self.boundary.h_max + 1.0))
        if self.x_cap <= self.boundary.h_max:
            raise InvalidModelError("x_cap must lie above the boundary")
        grid = np.linspace(0.0, self.horizon, min(self.n_steps, 10000) + 1)
        slopes = np.abs(np.diff(self.boundary(grid))) / np.diff(grid)
        limit = self.boundary.lipschitz
        if slopes.size and slopes.max() > limit * (1.0 + 1e-6) + 1e-9:
            raise InvalidModelError(f"boundary slope {slopes.max():.6g} exceeds its Lipschitz constant {limit:.6g}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def lipschitz(self) -> float:
        return self.boundary.lipschitz


@dataclass
class PathBatch:
    count: int
    survived: np.ndarray
    absorption_time: np.ndarray
    terminal: np.ndarray
    clamped: int = 0
    times: Optional[np.ndarray] = None
    positions: Optional[np.ndarray] = None

    def dump_rows(self, limit: int) -> List[list]:
        """Rows (path_id, t, x) for the first `limit` paths while alive"""
        if self.positions is None:
            return []
        rows = []
        for path_id in range(min(limit, self.count)):
            for t, x in zip(self.times, self.positions[path_id]):
                if not math.isnan(x):
                    rows.append([path_id, float(t), float(x)])
        return rows


@dataclass
class _Block:
    survived: np.ndarray
    absorbed_step: np.ndarray
    terminal: np.ndarray
    clamped: int
    positions: Optional[np.ndarray] = None
    occupation: Optional[np.ndarray] = None


def _generator(model: DiffusionModel, block_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([model.seed, model.stream, block_index])))


def _simulate_block(
    model: DiffusionModel,
    x0: float,
    count: int,
    block_index: int,
    occupation_edges: Optional[np.ndarray] = None,
) -> _Block:
    rng = _generator(model, block_index)
    n_steps = model.n_steps
    dt = model.dt
    root_dt = math.sqrt(dt)
    x = np.full(count, float(x0))
    alive = np.ones(count, dtype=bool)
    absorbed_step = np.full(count, -1, dtype=np.int64)
    clamped = 0
    h_here = float(model.boundary(0.0))

    record = model.record_every
    positions = None
    if record is not None:
        positions = np.full((count, n_steps // record + 1), np.nan)
        positions[:, 0] = x
    occupation = None
    rows = np.arange(count)
    if occupation_edges is not None:
        occupation = np.zeros((count, len(occupation_edges) - 1), dtype=np.int64)

    for k in range(n_steps):
        noise = rng.standard_normal(count)
        uniform = rng.random(count)
        drift = model.drift(x)
        if np.isnan(drift[alive]).any():
            raise ModelError(f"drift returned NaN at step {k}")
        proposal = x - drift * dt + root_dt * noise
        h_next = float(model.boundary((k + 1) * dt))
        crossed = proposal <= h_next
        if model.bridge:
            gap = np.maximum(x - h_here, 0.0) * np.maximum(proposal - h_next, 0.0)
            crossed |= uniform < np.exp(-2.0 * gap / dt)
        absorbed_step[alive & crossed] = k + 1
        alive &= ~crossed
        over = alive & (proposal > model.x_cap)
        if over.any():
            clamped += int(over.sum())
            proposal = np.where(over, model.x_cap, proposal)
        x = np.where(alive, proposal, x)
        h_here = h_next

        if occupation is not None:
            index = np.searchsorted(occupation_edges, x, side="right") - 1
            inside = alive & (index >= 0) & (index < occupation.shape[1])
            occupation[rows[inside], index[inside]] += 1
        if positions is not None and (k + 1) % record == 0:
            positions[:, (k + 1) // record] = np.where(alive, x, np.nan)

    return _Block(
        survived=alive,
        absorbed_step=absorbed_step,
        terminal=x,
        clamped=clamped,
        positions=positions,
        occupation=occupation,
    )


def _run_blocks(
    model: DiffusionModel,
    x0: float,
    n_paths: int,
    threads: int,
    occupation_edges: Optional[np.ndarray] = None,
) -> List[_Block]:
    if n_paths < 1:
        raise InvalidModelError("the number of paths must be at least 1")
    if not x0 > float(model.boundary(0.0)):
        raise DomainError(f"x0={x0} must lie above the boundary h(0)={float(model.boundary(0.0))}")
    if x0 >= model.x_cap:
        raise DomainError(f"x0={x0} must lie below x_cap={model.x_cap}")
    sizes = [min(PATH_BLOCK_SIZE, n_paths - start) for start in range(0, n_paths, PATH_BLOCK_SIZE)]

    def run(block_index: int) -> _Block:
        return _simulate_block(model, x0, sizes[block_index], block_index, occupation_edges)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        blocks = list(executor.map(run, range(len(sizes))))
    clamped = sum(block.clamped for block in blocks)
    if clamped:
        logger.warning(f"{clamped} path step(s) clamped at x_cap={model.x_cap}")
    return blocks


def simulate_paths(model: DiffusionModel, x0: float, n_paths: int, threads: int = 1) -> PathBatch:
    """Euler-Maruyama paths absorbed at the moving boundary over [0, horizon]"""
    blocks = _run_blocks(model, x0, n_paths, threads)
    absorbed_step = np.concatenate([block.absorbed_step for block in blocks])
    absorption_time = np.where(absorbed_step >= 0, absorbed_step * model.dt, np.nan)
    positions = None
    times = None
    if model.record_every is not None:
        positions = np.concatenate([block.positions for block in blocks])
        times = model.dt * np.arange(0, model.n_steps + 1, model.record_every)
    return PathBatch(
        count=n_paths,
        survived=np.concatenate([block.survived for block in blocks]),
        absorption_time=absorption_time,
        terminal=np.concatenate([block.terminal for block in blocks]),
        clamped=sum(block.clamped for block in blocks),
        times=times,
        positions=positions,
    )


@dataclass(frozen=True)
class SurvivalEstimate:
    fraction: float
    stderr: float
    survivors: int
    count: int


def survival_estimate(batch: PathBatch) -> SurvivalEstimate:
    survivors = int(batch.survived.sum())
    fraction = survivors / batch.count
    return SurvivalEstimate(fraction, math.sqrt(fraction * (1.0 - fraction) / batch.count), survivors, batch.count)


@dataclass(frozen=True)
class HistogramEstimate:
    edges: np.ndarray
    mass: np.ndarray
    stderr: np.ndarray
    survivors: int
    count: int
    outside: float = 0.0
    clamped: int = 0

    @property
    def survival_fraction(self) -> float:
        return self.survivors / self.count

    def rows(self) -> List[list]:
        return [
            [float(left), float(right), float(mass), float(err)]
            for left, right, mass, err in zip(self.edges[:-1], self.edges[1:], self.mass, self.stderr)
        ]


def _check_edges(bins: Sequence[float]) -> np.ndarray:
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise InvalidModelError("bins must be at least two strictly increasing edges")
    return edges


def _require_survivors(survivors: int, count: int):
    if survivors < MIN_SURVIVORS:
        raise TooFewSurvivorsError(survivors, survivors / count, MIN_SURVIVORS)


def mc_conditioned_law(
    model: DiffusionModel, x0: float, t: float, n_paths: int, bins: Sequence[float], threads: int = 1
) -> HistogramEstimate:
    """Histogram of X_t among paths that survive to time t"""
    edges = _check_edges(bins)
    if t == 0:
        mass = np.zeros(len(edges) - 1)
        index = np.searchsorted(edges, x0, side="right") - 1
        if 0 <= index < len(mass):
            mass[index] = 1.0
        return HistogramEstimate(edges, mass, np.zeros_like(mass), n_paths, n_paths, outside=1.0 - mass.sum())
    batch = simulate_paths(replace(model, horizon=t, record_every=None), x0, n_paths, threads)
    survivors = int(batch.survived.sum())
    _require_survivors(survivors, n_paths)
    counts, _ = np.histogram(batch.terminal[batch.survived], bins=edges)
    mass = counts / survivors
    return HistogramEstimate(
        edges=edges,
        mass=mass,
        stderr=np.sqrt(mass * (1.0 - mass) / survivors),
        survivors=survivors,
        count=n_paths,
        outside=1.0 - float(mass.sum()),
        clamped=batch.clamped,
    )


def mc_quasi_ergodic(
    model: DiffusionModel, x0: float, horizon: float, n_paths: int, bins: Sequence[float], threads: int = 1
) -> HistogramEstimate:
    """
    Time-averaged occupation of surviving paths over the steps 1..n of [0, horizon].

    Standard errors come from the spread of the per-path occupation fractions.
    """
    edges = _check_edges(bins)
    run_model = replace(model, horizon=horizon, record_every=None)
    blocks = _run_blocks(run_model, x0, n_paths, threads, occupation_edges=edges)
    n_steps = run_model.n_steps
    sums = []
    squares = []
    survivors = 0
    for block in blocks:
        fractions = block.occupation[block.survived] / n_steps
        sums.append(fractions.sum(axis=0))
        squares.append((fractions ** 2).sum(axis=0))
        survivors += int(block.survived.sum())
    _require_survivors(survivors, n_paths)
    mass = np.sum(sums, axis=0) / survivors
    variance = np.maximum(np.sum(squares, axis=0) - survivors * mass ** 2, 0.0) / (survivors - 1)
    return HistogramEstimate(
        edges=edges,
        mass=mass,
        stderr=np.sqrt(variance / survivors),
        survivors=survivors,
        count=n_paths,
        outside=1.0 - float(mass.sum()),
        clamped=sum(block.clamped for block in blocks),
    )


def wilson_interval(hits: int, count: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval (lower, upper) for a binomial proportion"""
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    p = hits / count
    denominator = 1.0 + z ** 2 / count
    center = (p + z ** 2 / (2.0 * count)) / denominator
    half = z * math.sqrt(p * (1.0 - p) / count + z ** 2 / (4.0 * count ** 2)) / denominator
    lower = 0.0 if hits == 0 else max(0.0, center - half)
    upper = 1.0 if hits == count else min(1.0, center + half)
    return lower, upper


@dataclass(frozen=True)
class ProbePoint:
    x: float
    estimate: float
    half_width: float
    lower: float
    hits: int
    count: int


@dataclass(frozen=True)
class ComesDownReport:
    points: List[ProbePoint]
    plateau_detected: bool
    plateau_positive: bool

    def rows(self) -> List[list]:
        return [[p.x, p.estimate, p.half_width] for p in self.points]


def comes_down_probe(
    model: DiffusionModel, y: float, t: float, x_list: Sequence[float], n_paths: int, threads: int = 1
) -> ComesDownReport:
    """
    Estimate P_x(τ_y < t) for increasing starting points x.

    A plateau is detected when the last three estimates differ pairwise by less
    than the sum of their Wilson half-widths; it is positive when the last
    estimate's lower Wilson bound is above zero.
    """
    if not y > model.boundary.h_max:
        raise DomainError(f"probe level y={y} must lie above sup h={model.boundary.h_max}")
    xs = [float(x) for x in x_list]
    if not xs or any(x <= y for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
        raise DomainError("x_list must be strictly ascending and above y")
    x_cap = max(model.x_cap, 2.0 * xs[-1])
    points = []
    for i, x in enumerate(xs):
        probe = replace(
            model,
            boundary=Boundary.constant(y),
            horizon=t,
            stream=model.stream + i + 1,
            x_cap=x_cap,
            record_every=None,
        )
        batch = simulate_paths(probe, x, n_paths, threads)
        hits = int((~batch.survived).sum())
        lower, upper = wilson_interval(hits, n_paths)
        points.append(ProbePoint(x, hits / n_paths, (upper - lower) / 2.0, lower, hits, n_paths))
        logger.debug(f"P_{x}(τ_{y} < {t}) ≈ {hits / n_paths:.5f}")

    plateau = False
    if len(points) >= 3:
        last = points[-3:]
        plateau = all(
            abs(a.estimate - b.estimate) < a.half_width + b.half_width
            for i, a in enumerate(last)
            for b in last[i + 1:]
        )
    return ComesDownReport(points, plateau, plateau and points[-1].lower > 0)


def scale_function(model: DiffusionModel, z: float, x: float) -> float:
    """Λ_z(x) = ∫_z^x exp(2 G(y)) dy with G(y) = ∫_0^y V"""
    if x < z:
        raise DomainError(f"scale function needs x >= z, got z={z}, x={x}")
    if x == z:
        return 0.0
    grid = np.linspace(z, x, SCALE_GRID_POINTS)
    exponent = 2.0 * model.drift.potential(grid)
    if np.any(exponent > EXP_OVERFLOW):
        raise DriftTooStrongError(float(grid[np.argmax(exponent > EXP_OVERFLOW)]))
    spline = interpolate.CubicSpline(grid, exponent / 2.0)
    value, error = integrate.quad(lambda y: math.exp(2.0 * float(spline(y))), z, x, epsabs=0.0, epsrel=1e-10, limit=200)
    if error > QUAD_RELATIVE_ERROR * abs(value):
        logger.warning(f"scale function quadrature error {error:.3e} above tolerance")
    return value


def speed_measure_density(model: DiffusionModel, xi: float) -> float:
    """Density 2 exp(-2 G(ξ)) of the speed measure"""
    exponent = -2.0 * float(model.drift.potential(xi))
    if exponent > EXP_OVERFLOW:
        raise DriftTooStrongError(xi)
    return 2.0 * math.exp(exponent)


def _passage_inputs(kind: str, x: float, t: float, level: float, slope: float) -> Tuple[float, float]:
    if kind not in ("constant_level", "linear_boundary"):
        raise InvalidModelError(f"unknown passage kind {kind!r}")
    distance = x - level
    if not distance > 0:
        raise DomainError(f"x={x} must lie above the level {level}")
    if not t > 0:
        raise DomainError("t must be positive")
    return distance, (slope if kind == "linear_boundary" else 0.0)


def brownian_passage_density(kind: str, x: float, t: float, level: float, slope: float = 0.0) -> float:
    """
    Density at t of the first passage of Brownian motion from x to the boundary
    u -> level - slope·u (slope = 0 for "constant_level").
    """
    distance, slope = _passage_inputs(kind, x, t, level, slope)
    return distance / math.sqrt(2.0 * math.pi * t ** 3) * math.exp(-((distance + slope * t) ** 2) / (2.0 * t))


def brownian_survival(kind: str, x: float, t: float, level: float, slope: float = 0.0) -> float:
    """P_x(τ > t) for Brownian motion and the boundary u -> level - slope·u"""
    distance, slope = _passage_inputs(kind, x, t, level, slope)
    root = math.sqrt(t)
    if slope == 0.0:
        return 2.0 * float(stats.norm.cdf(distance / root)) - 1.0
    return float(
        stats.norm.cdf((distance + slope * t) / root)
        - math.exp(-2.0 * slope * distance) * stats.norm.cdf((-distance + slope * t) / root)
    )


def brownian_conditioned_bins(x0: float, level: float, t: float, bins: Sequence[float]) -> np.ndarray:
    """Mass per bin of the law at t of Brownian motion killed at a constant level, given survival"""
    edges = np.maximum(_check_edges(bins), level)
    if not x0 > level or not t > 0:
        raise DomainError("need x0 above the level and t > 0")
    root = math.sqrt(t)
    direct = stats.norm.cdf((edges - x0) / root)
    mirrored = stats.norm.cdf((edges + x0 - 2.0 * level) / root)
    mass = np.diff(direct) - np.diff(mirrored)
    return mass / (2.0 * stats.norm.cdf((x0 - level) / root) - 1.0)


def brownian_occupation_bins(
    x0: float, level: float, horizon: float, n_steps: int, bins: Sequence[float], nodes: int = 32, pieces: int = 16
) -> np.ndarray:
    """
    (1/n) Σ_{k=1..n} P_x0(X_{k·dt} ∈ B | τ > horizon) for Brownian motion killed at a
    constant level, with dt = horizon/n; each bin is integrated by composite
    Gauss-Legendre quadrature.
    """
    edges = np.maximum(_check_edges(bins), level)
    if not x0 > level:
        raise DomainError("x0 must lie above the level")
    unit_nodes, unit_weights = np.polynomial.legendre.leggauss(nodes)
    ys = []
    ws = []
    for left, right in zip(edges[:-1], edges[1:]):
        cuts = np.linspace(left, right, pieces + 1)
        half = (cuts[1:] - cuts[:-1]) / 2.0
        middle = (cuts[1:] + cuts[:-1]) / 2.0
        ys.append((middle[:, None] + half[:, None] * unit_nodes[None, :]).ravel())
        ws.append((half[:, None] * unit_weights[None, :]).ravel())
    ys = np.array(ys)
    ws = np.array(ws)

    def killed_density(s: float) -> np.ndarray:
        root = math.sqrt(s)
        return (stats.norm.pdf((ys - x0) / root) - stats.norm.pdf((ys + x0 - 2.0 * level) / root)) / root

    def survive(remaining: float) -> np.ndarray:
        if remaining <= 0:
            return np.ones_like(ys)
        return 2.0 * stats.norm.cdf((ys - level) / math.sqrt(remaining)) - 1.0

    dt = horizon / n_steps
    total = np.zeros(len(edges) - 1)
    for k in range(1, n_steps + 1):
        s = k * dt
        total += (ws * killed_density(s) * survive(horizon - s)).sum(axis=1)
    start_survival = 2.0 * stats.norm.cdf((x0 - level) / math.sqrt(horizon)) - 1.0
    return total / (n_steps * start_survival)


@dataclass(frozen=True)
class DriftHypothesis:
    sup_value: float
    argmax: float


def drift_hypothesis_check(model: DiffusionModel, grid: Sequence[float]) -> DriftHypothesis:
    """Advisory sup over the grid of V'(x) - V(x)^2"""
    xs = np.asarray(grid, dtype=float)
    values = model.drift.derivative(xs) - model.drift(xs) ** 2
    index = int(np.argmax(values))
    if index == len(xs) - 1 and len(xs) > 1:
        logger.warning("sup of V' - V^2 is attained at the end of the grid; it may be unbounded")
    return DriftHypothesis(float(values[index]), float(xs[index]))


@dataclass(frozen=True)
class BoundaryGap:
    moving: SurvivalEstimate
    limit: SurvivalEstimate

    @property
    def gap(self) -> float:
        return self.moving.fraction - self.limit.fraction


def boundary_gap_diagnostic(model: DiffusionModel, x0: float, n_paths: int, threads: int = 1) -> BoundaryGap:
    """Survival under h against survival with absorption at the limit level of h"""
    limit_level = model.boundary.limit_level
    if limit_level is None:
        raise ScheduleKindError("boundary gap needs a boundary with a limit level")
    moving = survival_estimate(simulate_paths(replace(model, record_every=None), x0, n_paths, threads))
    fixed = replace(model, boundary=Boundary.constant(limit_level), record_every=None)
    limit = survival_estimate(simulate_paths(fixed, x0, n_paths, threads))
    logger.info(f"Boundary gap: moving {moving.fraction:.5f} vs limit {limit.fraction:.5f}")
    return BoundaryGap(moving, limit)
