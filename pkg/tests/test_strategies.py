import random

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cda_forge.strategies import (Observation, StrategySpec, cp_price, fm_price, parse_label,
                                  rm_price, seller_price, truthful_price)


def obs(value, quote=None, upper=50):
    return Observation(cycle=1, quote=quote, own_offer=None, value=value, zone_lower=0,
                       zone_upper=upper)


def test_examples():
    assert fm_price(30, 5) == 35
    assert cp_price(30, 40, 5) == 40      # quote above cost: meet it
    assert cp_price(30, 25, 5) == 35      # quote below cost: fall back to the markup
    assert cp_price(30, None, 5) == 35
    assert cp_price(30, 30, 5) == 35
    assert truthful_price(17) == 17
    with pytest.raises(ValueError):
        rm_price(60, 50, random.Random(0))


def test_labels_roundtrip():
    for label in ["FM5", "CP25", "RM", "P", "TRUTH", "OPT"]:
        spec = parse_label(label)
        assert spec.label == label
        assert StrategySpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        parse_label("XYZ")
    with pytest.raises(ValueError):
        StrategySpec("FM", -1)


def test_observation_checks_zone():
    with pytest.raises(ValueError):
        obs(60)


def test_seller_price_dispatch():
    rng = random.Random(1)
    assert seller_price(StrategySpec("FM", 5), obs(10), rng) == 15
    assert seller_price(StrategySpec("CP", 5), obs(10, quote=22), rng) == 22
    assert seller_price(StrategySpec("TRUTH"), obs(10), rng) == 10
    with pytest.raises(ValueError):
        seller_price(StrategySpec("P"), obs(10), rng)


def test_rm_is_uniform():
    rng = random.Random(42)
    cost, upper = 20, 29
    draws = np.array([rm_price(cost, upper, rng) for _ in range(20_000)])
    counts = np.bincount(draws - cost, minlength=upper - cost + 1)
    assert counts.sum() == 20_000 and len(counts) == upper - cost + 1
    assert stats.chisquare(counts).pvalue > 0.001


@given(st.integers(0, 100), st.integers(0, 30), st.one_of(st.none(), st.integers(0, 100)))
def test_no_loss(cost, markup, quote):
    # every baseline asks at least the seller's cost
    assert fm_price(cost, markup) >= cost
    assert cp_price(cost, quote, markup) >= cost
    rng = random.Random(cost)
    assert cost <= rm_price(cost, 100, rng) <= 100
