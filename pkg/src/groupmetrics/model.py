"""Domain types for research-group assessment data.

Quality profiles are the peer-review star-band percentages awarded to a
group's submitted outputs; weighting schemes turn a profile into a single
quality score; discipline configs carry the critical-mass size thresholds
used to classify groups as small, medium or large.

All types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

PROFILE_SUM_TOLERANCE = 0.5  # published profiles are rounded, so sums drift off 100

BAND_NAMES = ("p4", "p3", "p2", "p1", "pU")


class GroupMetricsError(Exception):
    """Base class for all errors raised by this package."""


class ProfileError(GroupMetricsError):
    """A quality profile violates its invariants."""


class NegativeBandError(ProfileError):
    def __init__(self, band: str, value: float):
        super().__init__(f"band {band} is negative: {value}")
        self.band = band
        self.value = value


class BandOver100Error(ProfileError):
    def __init__(self, band: str, value: float):
        super().__init__(f"band {band} exceeds 100: {value}")
        self.band = band
        self.value = value


class SumOutOfToleranceError(ProfileError):
    def __init__(self, total: float):
        super().__init__(
            f"profile bands sum to {total}, expected 100 within "
            f"{PROFILE_SUM_TOLERANCE}"
        )
        self.total = total


class NonPositiveSizeError(GroupMetricsError):
    def __init__(self, value: float):
        super().__init__(f"group size must be positive, got {value}")
        self.value = value


class InvalidWeightingError(GroupMetricsError):
    pass


class InvalidThresholdsError(GroupMetricsError):
    pass


class SizeClass(str, Enum):
    """Critical-mass size category of a research group.

    Small groups sit at or below the lower critical mass, medium groups
    between the two masses, large groups above the upper one.  Unknown
    marks groups whose discipline has no configured thresholds.
    """

    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"
    UNKNOWN = "unknown"


# Ordering used by monotonicity checks; UNKNOWN deliberately absent.
SIZE_CLASS_ORDER = {SizeClass.SMALL: 0, SizeClass.MEDIUM: 1, SizeClass.LARGE: 2}


class Subgroup(str, Enum):
    """Analysis category: small and medium groups are merged because they
    share the same linear quality-size regime below the upper critical mass."""

    ALL = "all"
    LARGE = "large"
    MEDIUM_SMALL = "medium_small"


def in_subgroup(size_class: SizeClass, subgroup: Subgroup) -> bool:
    """Membership of a size class in an analysis subgroup.

    Unknown-class groups belong to ALL only.
    """
    if subgroup is Subgroup.ALL:
        return True
    if subgroup is Subgroup.LARGE:
        return size_class is SizeClass.LARGE
    return size_class in (SizeClass.SMALL, SizeClass.MEDIUM)


@dataclass(frozen=True)
class QualityProfile:
    """Star-band percentages (4*, 3*, 2*, 1*, unclassified) for one group.

    Each band is a percentage in [0, 100]; the five bands sum to 100
    within ``PROFILE_SUM_TOLERANCE``.
    """

    p4: float
    p3: float
    p2: float
    p1: float
    pU: float

    def __post_init__(self):
        for band, value in zip(BAND_NAMES, self.bands()):
            if not math.isfinite(value):
                raise ProfileError(f"band {band} is not finite: {value}")
            if value < 0:
                raise NegativeBandError(band, value)
            if value > 100:
                raise BandOver100Error(band, value)
        total = self.p4 + self.p3 + self.p2 + self.p1 + self.pU
        if abs(total - 100.0) > PROFILE_SUM_TOLERANCE:
            raise SumOutOfToleranceError(total)

    def bands(self) -> tuple[float, float, float, float, float]:
        return (self.p4, self.p3, self.p2, self.p1, self.pU)


def validate_profile(raw: Sequence[float] | QualityProfile) -> QualityProfile:
    """Build a validated profile from five band percentages.

    Accepts an already-validated profile and returns it unchanged, so
    validation is idempotent.
    """
    if isinstance(raw, QualityProfile):
        return raw
    values = tuple(float(v) for v in raw)
    if len(values) != 5:
        raise ProfileError(f"expected 5 band values, got {len(values)}")
    return QualityProfile(*values)


@dataclass(frozen=True)
class WeightingScheme:
    """Per-band funding weights applied to a quality profile."""

    w4: float
    w3: float
    w2: float
    w1: float
    wU: float

    def __post_init__(self):
        weights = self.weights()
        for name, w in zip(("w4", "w3", "w2", "w1", "wU"), weights):
            if not math.isfinite(w) or w < 0:
                raise InvalidWeightingError(f"weight {name} must be >= 0, got {w}")
        if not any(w > 0 for w in weights):
            raise InvalidWeightingError("at least one weight must be positive")

    def weights(self) -> tuple[float, float, float, float, float]:
        return (self.w4, self.w3, self.w2, self.w1, self.wU)

    @classmethod
    def from_string(cls, text: str) -> "WeightingScheme":
        """Parse a comma-separated ``w4,w3,w2,w1,wU`` flag value."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 5:
            raise InvalidWeightingError(
                f"expected 5 comma-separated weights, got {text!r}"
            )
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise InvalidWeightingError(f"non-numeric weight in {text!r}") from exc
        return cls(*values)


# The post-2008 funding formula: 4* work rewarded seven times, 3* three
# times the value of 2*; lower bands unfunded.
DEFAULT_SCHEME = WeightingScheme(7.0, 3.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class DisciplineConfig:
    """Per-discipline critical masses and quality weighting.

    Thresholds are optional because they are only published for some
    disciplines; groups in a discipline without both thresholds get the
    UNKNOWN size class.
    """

    discipline_id: str
    name: str
    Nk: float | None = None
    Nc: float | None = None
    scheme: WeightingScheme = DEFAULT_SCHEME

    def __post_init__(self):
        if not self.discipline_id:
            raise InvalidThresholdsError("discipline_id must be non-empty")
        for label, v in (("Nk", self.Nk), ("Nc", self.Nc)):
            if v is not None and (not math.isfinite(v) or v <= 0):
                raise InvalidThresholdsError(f"{label} must be positive, got {v}")
        if self.Nk is not None and self.Nc is not None and self.Nk > self.Nc:
            raise InvalidThresholdsError(
                f"Nk ({self.Nk}) must not exceed Nc ({self.Nc})"
            )

    @property
    def has_thresholds(self) -> bool:
        return self.Nk is not None and self.Nc is not None


def classify_size(N: float, config: DisciplineConfig) -> SizeClass:
    """Classify a group's FTE size against its discipline's critical masses.

    Small is N <= Nk, medium is Nk < N <= Nc, large is N > Nc; the
    boundaries are assigned downward so the classes partition the sizes.
    Returns UNKNOWN when the discipline has no thresholds.
    """
    if not math.isfinite(N) or N <= 0:
        raise NonPositiveSizeError(N)
    if not config.has_thresholds:
        return SizeClass.UNKNOWN
    if N <= config.Nk:
        return SizeClass.SMALL
    if N <= config.Nc:
        return SizeClass.MEDIUM
    return SizeClass.LARGE


@dataclass(frozen=True)
class ResearchGroup:
    """One unit-of-assessment submission: a group with FTE size, quality
    profile and (optionally) a supplied group-level citation impact."""

    group_id: str
    institution: str
    discipline_id: str
    N: float
    profile: QualityProfile
    nci: float | None = None
    size_class: SizeClass = SizeClass.UNKNOWN

    def __post_init__(self):
        if not math.isfinite(self.N) or self.N <= 0:
            raise NonPositiveSizeError(self.N)
        if self.nci is not None and (not math.isfinite(self.nci) or self.nci < 0):
            raise GroupMetricsError(
                f"nci must be >= 0 when present, got {self.nci} "
                f"(group {self.group_id})"
            )
