"""Sort materials by their fitted stiffness (and optionally damping and exponent)."""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .core import ViscoelasticFit
from .errors import (
    ClassConfigError,
    IdentifiabilityError,
    ManifestError,
    SeparabilityError,
)
from .util import read_json, read_shipped, shipped_names

logger = logging.getLogger(__name__)

DEFAULT_CLASSES = "waste_sorting"
# A class earns a damping rule when all its eta values sit below this
# fraction of every other class's smallest eta.
ETA_SPLIT_RATIO = 0.2


def _bound(value: Any) -> float | None:
    return None if value is None else float(value)


def _overlap(lo_a: float, hi_a: float, lo_b: float, hi_b: float) -> bool:
    return max(lo_a, lo_b) < min(hi_a, hi_b)


@dataclass(frozen=True)
class MaterialClass:
    """One material category; ranges are half-open ``[min, max)``, None is unbounded."""

    label: str
    k_min_pa: float = 0.0
    k_max_pa: float | None = None
    eta_min_pa_s: float | None = None
    eta_max_pa_s: float | None = None
    n_min: float | None = None
    n_max: float | None = None
    priority: int = 1
    fallback: bool = False

    def __post_init__(self) -> None:
        if not self.label:
            raise ClassConfigError("class label must not be empty")
        for name, low, high in (
            ("k", self.k_min_pa, self.k_max_pa),
            ("eta", self.eta_min_pa_s, self.eta_max_pa_s),
            ("n", self.n_min, self.n_max),
        ):
            if low is not None and high is not None and not low < high:
                raise ClassConfigError(f"{self.label}: {name} range [{low}, {high}) is empty")

    @property
    def has_eta_rule(self) -> bool:
        return self.eta_min_pa_s is not None or self.eta_max_pa_s is not None

    def _span(self, low: float | None, high: float | None) -> tuple[float, float]:
        return (-math.inf if low is None else low, math.inf if high is None else high)

    def k_span(self) -> tuple[float, float]:
        return self._span(self.k_min_pa, self.k_max_pa)

    def eta_span(self) -> tuple[float, float]:
        return self._span(self.eta_min_pa_s, self.eta_max_pa_s)

    def n_span(self) -> tuple[float, float]:
        return self._span(self.n_min, self.n_max)

    def rules_fired(self, K: float, eta: float, n: float) -> list[str] | None:
        """Names of the rules this class applies, or None when one fails."""
        low, high = self.k_span()
        if not low <= K < high:
            return None
        fired = ["k_range"]
        if self.has_eta_rule:
            low, high = self.eta_span()
            if not low <= eta < high:
                return None
            fired.append("eta_rule")
        if self.n_min is not None or self.n_max is not None:
            low, high = self.n_span()
            if not low <= n < high:
                return None
            fired.append("n_rule")
        return fired

    def overlaps(self, other: MaterialClass) -> bool:
        return all(
            _overlap(*mine, *theirs)
            for mine, theirs in (
                (self.k_span(), other.k_span()),
                (self.eta_span(), other.eta_span()),
                (self.n_span(), other.n_span()),
            )
        )

    def scaled(self, factor: float) -> MaterialClass:
        """Stiffness bounds multiplied by ``factor``."""
        return replace(
            self,
            k_min_pa=self.k_min_pa * factor,
            k_max_pa=None if self.k_max_pa is None else self.k_max_pa * factor,
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MaterialClass:
        try:
            return cls(
                label=str(data["label"]),
                k_min_pa=float(data.get("k_min_pa", 0.0)),
                k_max_pa=_bound(data.get("k_max_pa")),
                eta_min_pa_s=_bound(data.get("eta_min_pa_s")),
                eta_max_pa_s=_bound(data.get("eta_max_pa_s")),
                n_min=_bound(data.get("n_min")),
                n_max=_bound(data.get("n_max")),
                priority=int(data.get("priority", 1)),
                fallback=bool(data.get("fallback", False)),
            )
        except KeyError as e:
            raise ClassConfigError(f"class entry missing {e}") from e
        except (TypeError, ValueError) as e:
            if isinstance(e, ClassConfigError):
                raise
            raise ClassConfigError(f"invalid class entry: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "label": self.label,
            "k_min_pa": self.k_min_pa,
            "k_max_pa": self.k_max_pa,
            "priority": self.priority,
        }
        for key in ("eta_min_pa_s", "eta_max_pa_s", "n_min", "n_max"):
            if getattr(self, key) is not None:
                data[key] = getattr(self, key)
        if self.fallback:
            data["fallback"] = True
        return data


@dataclass(frozen=True)
class ClassConfig:
    """A validated, immutable set of material classes with one fallback."""

    classes: tuple[MaterialClass, ...]
    source: str = ""

    def __post_init__(self) -> None:
        if not self.classes:
            raise ClassConfigError("class config is empty")
        fallbacks = [c for c in self.classes if c.fallback]
        if len(fallbacks) != 1:
            raise ClassConfigError(
                f"class config needs exactly one fallback class, found {len(fallbacks)}",
            )
        labels = [c.label for c in self.classes]
        if len(set(labels)) != len(labels):
            raise ClassConfigError("class labels must be unique")
        clashes = [
            f"{a.label} / {b.label}"
            for a, b in itertools.combinations(self.classes, 2)
            if a.priority == b.priority and a.overlaps(b)
        ]
        if clashes:
            raise ClassConfigError(
                "classes overlap at equal priority: " + "; ".join(clashes),
            )

    @property
    def fallback(self) -> MaterialClass:
        return next(c for c in self.classes if c.fallback)

    @property
    def uses_eta(self) -> bool:
        return any(c.has_eta_rule for c in self.classes)

    def ordered(self) -> list[MaterialClass]:
        # Stable: equal priorities keep file order.
        return sorted(self.classes, key=lambda c: c.priority)

    def scaled(self, factor: float) -> ClassConfig:
        if not factor > 0:
            raise ClassConfigError(f"scale factor must be positive, got {factor}")
        return ClassConfig(tuple(c.scaled(factor) for c in self.classes), self.source)

    def to_list(self) -> list[dict[str, Any]]:
        return [c.to_dict() for c in self.classes]

    @classmethod
    def from_list(cls, data: Any, source: str = "") -> ClassConfig:
        if not isinstance(data, list):
            raise ClassConfigError("class config must be a JSON list")
        return cls(tuple(MaterialClass.from_dict(entry) for entry in data), source)


def load_class_config(ref: str | Path | None = None) -> ClassConfig:
    """Load classes from a JSON file, or a shipped config by name."""
    ref = DEFAULT_CLASSES if ref is None else ref
    path = Path(ref)
    if path.exists():
        data = read_json(path)
    elif str(ref).removesuffix(".json") in shipped_names("classes"):
        data = read_shipped("classes", str(ref))
    else:
        raise ManifestError("class config not found", path)
    try:
        return ClassConfig.from_list(data, source=str(ref))
    except ClassConfigError as e:
        error_msg = f"{ref}: {e}"
        raise ClassConfigError(error_msg) from e


@dataclass(frozen=True)
class SortDecision:
    label: str
    material: str
    matched_by: tuple[str, ...]
    K_pa: float
    eta_pa_s: float
    n: float
    source: str = ""

    @property
    def is_fallback(self) -> bool:
        return self.matched_by == ("fallback",)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "material": self.material,
            "matched_by": list(self.matched_by),
            "K_pa": self.K_pa,
            "eta_pa_s": self.eta_pa_s,
            "n": self.n,
            "source": self.source,
        }


def classify(fit: ViscoelasticFit, classes: ClassConfig | Sequence[MaterialClass]) -> SortDecision:
    """Pick the first class, in priority order, whose rules all pass."""
    config = classes if isinstance(classes, ClassConfig) else ClassConfig(tuple(classes))
    if not fit.identifiable and config.uses_eta:
        raise IdentifiabilityError(
            f"{fit.label or 'fit'}: damping is not identifiable but classes use eta rules",
        )
    for candidate in config.ordered():
        fired = candidate.rules_fired(fit.K_pa, fit.eta_pa_s, fit.n)
        if fired is not None:
            material, matched_by = candidate.label, tuple(fired)
            break
    else:
        material, matched_by = config.fallback.label, ("fallback",)
    return SortDecision(
        label=fit.label,
        material=material,
        matched_by=matched_by,
        K_pa=fit.K_pa,
        eta_pa_s=fit.eta_pa_s,
        n=fit.n,
        source=fit.source,
    )


@dataclass
class _Group:
    label: str
    k_values: list[float] = field(default_factory=list)
    eta_values: list[float] = field(default_factory=list)


def derive_thresholds(
    labeled_fits: Iterable[tuple[str, ViscoelasticFit]],
    fallback_label: str = "Unclassified",
) -> ClassConfig:
    """Build a class config from fits labelled with their true material.

    Classes are ordered by stiffness; each boundary is the geometric mean of
    the stiffest fit below it and the softest fit above it. The softest class
    starts at 0 and the stiffest is unbounded above.
    """
    groups: dict[str, _Group] = {}
    for label, fit in labeled_fits:
        group = groups.setdefault(label, _Group(label))
        group.k_values.append(fit.K_pa)
        group.eta_values.append(fit.eta_pa_s)
    if len(groups) < 2:
        raise ClassConfigError("deriving thresholds needs at least two classes")
    if fallback_label in groups:
        raise ClassConfigError(f"fallback label '{fallback_label}' is also a class label")

    ordered = sorted(groups.values(), key=lambda g: (min(g.k_values), max(g.k_values)))
    pairs = [
        (a.label, b.label)
        for a, b in itertools.combinations(ordered, 2)
        if min(b.k_values) <= max(a.k_values)
    ]
    if pairs:
        listing = ", ".join(f"{a} / {b}" for a, b in pairs)
        raise SeparabilityError(f"stiffness ranges overlap: {listing}", pairs)

    bounds = [
        math.sqrt(max(low.k_values) * min(high.k_values))
        for low, high in itertools.pairwise(ordered)
    ]
    lowers = [0.0, *bounds]
    uppers: list[float | None] = [*bounds, None]
    derived = []
    for group, k_min, k_max in zip(ordered, lowers, uppers, strict=True):
        others = [min(g.eta_values) for g in ordered if g is not group]
        eta_max = None
        if 0 < max(group.eta_values) < ETA_SPLIT_RATIO * min(others):
            eta_max = math.sqrt(max(group.eta_values) * min(others))
            logger.info("%s: low-damping rule eta < %.4g Pa·s", group.label, eta_max)
        derived.append(
            MaterialClass(
                label=group.label,
                k_min_pa=k_min,
                k_max_pa=k_max,
                eta_max_pa_s=eta_max,
            ),
        )
    derived.append(MaterialClass(label=fallback_label, priority=2, fallback=True))
    return ClassConfig(tuple(derived), source="derived")
