"""Baseline seller strategies and the truthful buyer behind one interface."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

STRATEGY_KINDS = ("FM", "RM", "CP", "TRUTH", "P", "OPT")


@dataclass(frozen=True)
class Observation:
    cycle: int
    quote: Optional[int]
    own_offer: Optional[int]
    value: int
    zone_lower: int
    zone_upper: int
    n_buys: int = 0
    n_sells: int = 0

    def __post_init__(self):
        if not self.zone_lower <= self.value <= self.zone_upper:
            raise ValueError(f"private value {self.value} outside the zone")


@dataclass(frozen=True)
class StrategySpec:
    """``kind`` is FM, RM, CP, TRUTH, P or OPT.  ``params`` holds the
    p-strategy options (see ``pstrategy.PConfig``) for kind P."""

    kind: str
    markup: int = 0
    params: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.markup < 0:
            raise ValueError("markup must be nonnegative")

    @property
    def label(self):
        return f"{self.kind}{self.markup}" if self.kind in ("FM", "CP") else self.kind

    def to_dict(self):
        d = {"kind": self.kind, "markup": self.markup}
        if self.params:
            d["params"] = dict(self.params)
        return d

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return parse_label(d)
        return cls(d["kind"], int(d.get("markup", 0)), dict(d.get("params", {})))


def parse_label(label: str) -> StrategySpec:
    """``"FM5"`` -> FM with markup 5, ``"P"`` -> p-strategy, and so on."""
    for kind in ("TRUTH", "OPT", "FM", "RM", "CP", "P"):
        if label.upper().startswith(kind):
            rest = label[len(kind):]
            return StrategySpec(kind, int(rest) if rest else 0)
    raise ValueError(f"unknown strategy label {label!r}")


def fm_price(cost, markup):
    return cost + markup


def rm_price(cost, zone_upper, rng):
    """Uniform integer on [cost, zone_upper]; ``rng`` is a ``random.Random``."""
    if cost > zone_upper:
        raise ValueError("cost above the zone")
    return rng.randint(cost, zone_upper)


def cp_price(cost, quote, markup):
    if quote is not None and quote > cost:
        return quote
    return cost + markup


def truthful_price(value):
    return value


def seller_price(spec: StrategySpec, obs: Observation, rng):
    """Ask of a non-adaptive seller strategy."""
    if spec.kind == "FM":
        return fm_price(obs.value, spec.markup)
    if spec.kind == "RM":
        return rm_price(obs.value, obs.zone_upper, rng)
    if spec.kind == "CP":
        return cp_price(obs.value, obs.quote, spec.markup)
    if spec.kind == "TRUTH":
        return truthful_price(obs.value)
    raise ValueError(f"{spec.kind} is not a stateless seller strategy")
