"""Shared test utilities, including the quadratic reference episode scanner.

The reference scanner is deliberately independent of the package: it walks
every candidate start day and scans forward for the first hit, with both
directions spelled out as explicit inequalities.
"""

from __future__ import annotations

import math

import numpy as np


def oracle_episodes(
    r,
    theta_i_abs: float,
    theta_f_abs: float,
    direction: str,
    entry_rule: str = "crossing",
    vol_scope: str = "window",
) -> list[tuple[int, int, float]]:
    """Quadratic-time scan returning (start, fht, volatility) tuples."""
    r = np.asarray(r, dtype=float)
    n = r.size

    if direction == "crash":
        def entered(t):
            return r[t] <= theta_i_abs

        def hit(t):
            return r[t] <= theta_f_abs
    else:
        def entered(t):
            return r[t] >= theta_i_abs

        def hit(t):
            return r[t] >= theta_f_abs

    episodes = []
    prev_hit = -1
    t = 0
    while t < n:
        ok = entered(t)
        if ok and entry_rule == "crossing" and t > 0:
            ok = not entered(t - 1)
        if not ok:
            if hit(t):  # hit day passed without opening an episode
                prev_hit = t
            t += 1
            continue
        if hit(t):
            # jump straight through the window: no episode
            prev_hit = t
            t += 1
            continue
        u = t + 1
        while u < n and not hit(u):
            u += 1
        if u == n:
            break  # open at series end: censored, discarded
        if vol_scope == "window":
            seg = r[t : u + 1]
        elif vol_scope == "no-entry":
            seg = r[t + 1 : u + 1]
        elif vol_scope == "no-hit":
            seg = r[t:u]
        elif vol_scope == "interior":
            seg = r[t + 1 : u]
        elif vol_scope == "stretch":
            seg = r[prev_hit + 1 : u + 1]
        else:
            raise ValueError(vol_scope)
        vol = float(np.std(seg)) if seg.size else math.nan
        episodes.append((t, u - t, vol))
        prev_hit = u
        t = u + 1
    return episodes


def random_windows(rng: np.random.Generator, sigma_bar: float, n_crash: int, n_rally: int):
    """Random crash and rally windows with varied start levels and widths."""
    from volstab.episodes import ThresholdWindow

    windows = []
    for _ in range(n_crash):
        ti = rng.uniform(-1.2, 0.8)
        width = rng.uniform(0.3, 2.2)
        windows.append(ThresholdWindow(round(ti, 3), round(ti - width, 3), sigma_bar, "crash"))
    for _ in range(n_rally):
        ti = rng.uniform(-0.8, 1.2)
        width = rng.uniform(0.3, 2.2)
        windows.append(ThresholdWindow(round(ti, 3), round(ti + width, 3), sigma_bar, "rally"))
    return windows


def assert_episodes_match(actual, expected, context: str = ""):
    """Exact (start, fht) agreement; volatilities equal to float tolerance."""
    got = [(e.start_index, e.fht) for e in actual]
    want = [(s, f) for s, f, _ in expected]
    assert got == want, f"{context}: episodes {got} != oracle {want}"
    for e, (_, _, vol) in zip(actual, expected):
        if math.isnan(vol):
            assert math.isnan(e.volatility), context
        else:
            # prefix-sum variance carries O(sqrt(eps)) absolute noise near zero
            assert math.isclose(e.volatility, vol, rel_tol=1e-9, abs_tol=1e-9), (
                f"{context}: volatility {e.volatility} != {vol}"
            )
