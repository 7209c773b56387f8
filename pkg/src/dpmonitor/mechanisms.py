"""Randomized algorithms under audit and the events used to witness violations.

Every sampler is vectorized over the batch: one call draws ``n`` independent
outputs of the mechanism on a fixed input. Scalar outputs are stored as a float
array, bit-sequence outputs as an ``(n, d)`` int8 array padded with ``-1``
after an abort.

Noise is generated by inverse-CDF transforms of one uniform per noise
variable, so a given seed fixes every output exactly.
"""

from __future__ import annotations

import dataclasses
import enum
from collections.abc import Sequence
from typing import Union

import numpy as np

from ._validation import (
    ConfigurationError,
    check_positive,
    check_positive_int,
    check_random_state,
)

__all__ = [
    "Scalar",
    "Bits",
    "ScalarBatch",
    "BitsBatch",
    "HalfLineLE",
    "PointSet",
    "ExactBits",
    "LaplaceNoise",
    "GaussianNoise",
    "LaplaceSum",
    "ReportNoisyMax",
    "RNMVariant",
    "Svt",
    "SvtVariant",
    "event_contains",
    "sample",
    "sample_batch",
    "noiseless_output",
    "run_laplace_sum",
    "run_rnm",
    "run_svt",
]

# Largest-magnitude uniform offset keeps u strictly inside (0, 1).
_HALF_ULP = 2.0**-54


# --------------------------------------------------------------------------
# Outputs


@dataclasses.dataclass(frozen=True)
class Scalar:
    value: float


@dataclasses.dataclass(frozen=True)
class Bits:
    bits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if any(b not in (0, 1) for b in self.bits):
            raise ConfigurationError(f"bit sequences hold only 0/1, got {self.bits}")


Output = Union[Scalar, Bits]


class ScalarBatch(Sequence):
    """``n`` scalar outputs backed by one float array."""

    kind = "scalar"

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ScalarBatch(self.values[i])
        return Scalar(float(self.values[i]))

    def __eq__(self, other):
        return isinstance(other, ScalarBatch) and np.array_equal(self.values, other.values)

    __hash__ = None


class BitsBatch(Sequence):
    """``n`` bit-sequence outputs; row ``i`` is valid up to ``lengths[i]``."""

    kind = "bits"

    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=np.int8)
        if self.bits.ndim != 2:
            raise ValueError("bit batches are two dimensional")
        pad = self.bits < 0
        d = self.bits.shape[1]
        self.lengths = np.where(pad.any(axis=1), np.argmax(pad, axis=1), d) if d else np.zeros(len(pad), int)

    def __len__(self):
        return self.bits.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return BitsBatch(self.bits[i])
        return Bits(tuple(self.bits[i, : self.lengths[i]]))

    def __eq__(self, other):
        return isinstance(other, BitsBatch) and np.array_equal(self.bits, other.bits)

    __hash__ = None


def _kind_of(output) -> str:
    if isinstance(output, (Scalar, ScalarBatch)):
        return "scalar"
    if isinstance(output, (Bits, BitsBatch)):
        return "bits"
    raise ConfigurationError(f"not a mechanism output: {type(output).__name__}")


# --------------------------------------------------------------------------
# Events


class _Event:
    kind: str

    def _check(self, output):
        if _kind_of(output) != self.kind:
            raise ConfigurationError(
                f"event {type(self).__name__} cannot be evaluated on {type(output).__name__} outputs"
            )

    def contains(self, output) -> bool:
        self._check(output)
        return bool(self.mask(_as_batch(output))[0])

    def count(self, batch) -> int:
        """Number of outputs in ``batch`` that fall inside the event."""
        self._check(batch)
        if len(batch) == 0:
            return 0
        return int(np.count_nonzero(self.mask(batch)))


@dataclasses.dataclass(frozen=True)
class HalfLineLE(_Event):
    """The half line ``(-inf, a]``."""

    a: float
    kind = "scalar"

    def mask(self, batch: ScalarBatch) -> np.ndarray:
        return batch.values <= self.a


@dataclasses.dataclass(frozen=True)
class PointSet(_Event):
    """A finite set of scalars, matched by exact equality."""

    points: frozenset
    kind = "scalar"

    def __post_init__(self):
        object.__setattr__(self, "points", frozenset(float(p) for p in self.points))

    def mask(self, batch: ScalarBatch) -> np.ndarray:
        return np.isin(batch.values, np.fromiter(self.points, float, len(self.points)))


@dataclasses.dataclass(frozen=True)
class ExactBits(_Event):
    """A single bit sequence; matches only outputs of identical length and content."""

    pattern: tuple[int, ...]
    kind = "bits"

    def __post_init__(self):
        object.__setattr__(self, "pattern", Bits(self.pattern).bits)

    def mask(self, batch: BitsBatch) -> np.ndarray:
        L = len(self.pattern)
        d = batch.bits.shape[1]
        if L > d:
            return np.zeros(len(batch), dtype=bool)
        hit = batch.lengths == L
        if L:
            hit &= np.all(batch.bits[:, :L] == np.asarray(self.pattern, dtype=np.int8), axis=1)
        return hit


Event = Union[HalfLineLE, PointSet, ExactBits]


def _as_batch(output):
    if isinstance(output, Scalar):
        return ScalarBatch([output.value])
    if isinstance(output, Bits):
        return BitsBatch(np.asarray(output.bits, dtype=np.int8).reshape(1, -1))
    return output


def event_contains(event: Event, output: Output) -> bool:
    """Membership of a single output in ``event``.

    Raises:
      ConfigurationError: scalar events applied to bit outputs or vice versa.
    """
    return event.contains(output)


# --------------------------------------------------------------------------
# Noise


class _RandomNoise:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def _uniform(self, size):
        return self.rng.random(size) + _HALF_ULP

    def laplace(self, scale, size):
        w = self._uniform(size) - 0.5
        return -scale * np.sign(w) * np.log1p(-2.0 * np.abs(w))

    def exponential(self, scale, size):
        return -scale * np.log1p(-self._uniform(size))

    def normal(self, std, size):
        return std * self.rng.standard_normal(size)


class _ZeroNoise:
    def laplace(self, scale, size):
        return np.zeros(size)

    exponential = normal = laplace


# --------------------------------------------------------------------------
# Mechanism specifications


@dataclasses.dataclass(frozen=True)
class LaplaceNoise:
    scale: float = 1.0

    def __post_init__(self):
        check_positive(self.scale, "Laplace scale")


@dataclasses.dataclass(frozen=True)
class GaussianNoise:
    variance: float = 2.0

    def __post_init__(self):
        check_positive(self.variance, "Gaussian variance")


def _as_tuple(values, name):
    vals = tuple(float(v) for v in values)
    if not all(np.isfinite(vals)):
        raise ConfigurationError(f"{name} must be finite")
    return vals


@dataclasses.dataclass(frozen=True)
class LaplaceSum:
    """Noisy sum of a database with entries in [0, 1]."""

    database: tuple[float, ...] = ()
    noise: Union[LaplaceNoise, GaussianNoise] = LaplaceNoise()

    kind = "scalar"

    def __post_init__(self):
        db = _as_tuple(self.database, "database")
        if any(not 0.0 <= v <= 1.0 for v in db):
            raise ConfigurationError("database entries must lie in [0, 1]")
        object.__setattr__(self, "database", db)
        if not isinstance(self.noise, (LaplaceNoise, GaussianNoise)):
            raise ConfigurationError(f"unsupported noise {self.noise!r}")

    def with_input(self, data) -> "LaplaceSum":
        return dataclasses.replace(self, database=tuple(data))

    def _draw(self, n, noise):
        if isinstance(self.noise, LaplaceNoise):
            z = noise.laplace(self.noise.scale, n)
        else:
            z = noise.normal(np.sqrt(self.noise.variance), n)
        return ScalarBatch(sum(self.database) + z)


class RNMVariant(str, enum.Enum):
    RETURN_INDEX = "return_index"
    RETURN_MAX_VALUE = "return_max_value"
    EXPONENTIAL_NOISE_INDEX = "exponential_noise_index"


@dataclasses.dataclass(frozen=True)
class ReportNoisyMax:
    """Report Noisy Max over counting queries (sensitivity 1 each).

    Index outputs are 1-based and emitted as integer-valued scalars so that
    the same half-line event applies to the index and max-value variants.
    """

    queries: tuple[float, ...] = ()
    epsilon: float = 1.0
    variant: RNMVariant = RNMVariant.RETURN_INDEX

    kind = "scalar"

    def __post_init__(self):
        object.__setattr__(self, "queries", _as_tuple(self.queries, "queries"))
        object.__setattr__(self, "variant", RNMVariant(self.variant))
        check_positive(self.epsilon, "epsilon")

    def with_input(self, data) -> "ReportNoisyMax":
        return dataclasses.replace(self, queries=tuple(data))

    def _draw(self, n, noise):
        d = len(self.queries)
        if d == 0:
            raise ConfigurationError("Report Noisy Max needs at least one query")
        scale = 2.0 / self.epsilon
        if self.variant is RNMVariant.EXPONENTIAL_NOISE_INDEX:
            z = noise.exponential(scale, (n, d))
        else:
            z = noise.laplace(scale, (n, d))
        noisy = np.asarray(self.queries) + z
        if self.variant is RNMVariant.RETURN_MAX_VALUE:
            return ScalarBatch(noisy.max(axis=1))
        # np.argmax keeps the first maximal entry: ties go to the lowest index.
        return ScalarBatch(np.argmax(noisy, axis=1).astype(float) + 1.0)


class SvtVariant(str, enum.Enum):
    V1 = "V1"
    V2 = "V2"
    V4 = "V4"
    V5 = "V5"
    V6 = "V6"


@dataclasses.dataclass(frozen=True)
class Svt:
    """Sparse Vector Technique, correct (V1, V2) and flawed (V4, V5, V6) variants.

    V2 is the reference algorithm: threshold noise ``Lap(2cD/eps)`` resampled
    after every above-threshold answer, query noise ``Lap(4cD/eps)``, abort
    after ``c`` positives. The other variants follow the numbering of Lyu,
    Su and Li (2017):

    ====  ====================  ====================  ========  =====
    name  threshold noise       query noise           resample  abort
    ====  ====================  ====================  ========  =====
    V1    Lap(2D/eps)           Lap(4cD/eps)          no        yes
    V2    Lap(2cD/eps)          Lap(4cD/eps)          yes       yes
    V4    Lap(4D/eps)           Lap(4D/(3 eps))       no        yes
    V5    Lap(2cD/eps)          none                  yes       yes
    V6    Lap(2D/eps)           Lap(2D/eps)           no        no
    ====  ====================  ====================  ========  =====

    ``D`` is the query sensitivity and ``c`` the bound on positive answers.
    """

    queries: tuple[float, ...] = ()
    variant: SvtVariant = SvtVariant.V2
    epsilon: float = 1.0
    threshold: float = 1.0
    bound: int = 1
    sensitivity: float = 1.0

    kind = "bits"

    def __post_init__(self):
        object.__setattr__(self, "queries", _as_tuple(self.queries, "queries"))
        object.__setattr__(self, "variant", SvtVariant(self.variant))
        check_positive(self.epsilon, "epsilon")
        check_positive(self.sensitivity, "sensitivity")
        check_positive_int(self.bound, "bound c")

    def with_input(self, data) -> "Svt":
        return dataclasses.replace(self, queries=tuple(data))

    def noise_scales(self) -> tuple[float, float, float | None, bool]:
        """``(threshold scale, query scale, resample scale or None, aborts)``."""
        unit = self.sensitivity / self.epsilon
        c = self.bound
        return {
            SvtVariant.V1: (2 * unit, 4 * c * unit, None, True),
            SvtVariant.V2: (2 * c * unit, 4 * c * unit, 2 * c * unit, True),
            SvtVariant.V4: (4 * unit, 4 * unit / 3, None, True),
            SvtVariant.V5: (2 * c * unit, 0.0, 2 * c * unit, True),
            SvtVariant.V6: (2 * unit, 2 * unit, None, False),
        }[self.variant]

    def _draw(self, n, noise):
        q = self.queries
        d = len(q)
        thr_scale, q_scale, resample, aborts = self.noise_scales()
        out = np.full((n, d), -1, dtype=np.int8)
        alive = np.ones(n, dtype=bool)
        count = np.zeros(n, dtype=np.int64)
        rho = noise.laplace(thr_scale, n)
        for i in range(d):
            nu = noise.laplace(q_scale, n) if q_scale > 0 else 0.0
            above = q[i] + nu >= self.threshold + rho
            out[alive, i] = above[alive]
            fired = alive & above
            if resample is not None:
                rho[fired] = noise.laplace(resample, int(fired.sum()))
            count += fired
            if aborts:
                alive &= count < self.bound
                if not alive.any():
                    break
        return BitsBatch(out)


MechanismSpec = Union[LaplaceSum, ReportNoisyMax, Svt]


# --------------------------------------------------------------------------
# Sampling


def sample_batch(spec: MechanismSpec, n: int, rng=None):
    """Draw ``n`` independent outputs of ``spec``.

    Args:
      spec: the mechanism together with its input.
      n: number of runs.
      rng: a ``numpy.random.Generator`` or an integer seed.

    Returns:
      A ``ScalarBatch`` or ``BitsBatch`` of length ``n``.
    """
    n = check_positive_int(n, "n")
    return spec._draw(n, _RandomNoise(check_random_state(rng)))


def sample(spec: MechanismSpec, rng=None) -> Output:
    return sample_batch(spec, 1, rng)[0]


def noiseless_output(spec: MechanismSpec) -> Output:
    """The output the mechanism would produce with every noise variable set to 0."""
    return spec._draw(1, _ZeroNoise())[0]


def _typed(spec, cls, rng):
    if not isinstance(spec, cls):
        raise ConfigurationError(f"expected a {cls.__name__} spec, got {type(spec).__name__}")
    return sample(spec, rng)


def run_laplace_sum(spec: LaplaceSum, rng=None) -> Scalar:
    return _typed(spec, LaplaceSum, rng)


def run_rnm(spec: ReportNoisyMax, rng=None) -> Scalar:
    return _typed(spec, ReportNoisyMax, rng)


def run_svt(spec: Svt, rng=None) -> Bits:
    return _typed(spec, Svt, rng)
