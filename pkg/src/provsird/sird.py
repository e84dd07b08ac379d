"""Discrete-time SIRD machinery.

The model steps one day at a time::

    S(t+1) = S(t) - beta(t) S(t) I(t) / n
    I(t+1) = I(t) + (beta(t) S(t) / n - gamma_r(t) - gamma_d(t)) I(t)
    R(t+1) = R(t) + gamma_r(t) I(t)
    D(t+1) = D(t) + gamma_d(t) I(t)

Rates are recovered from observed compartments by inverting these equations
(the S equation for beta, since it isolates it).
"""

from __future__ import annotations

import numpy as np

from .data_model import CompartmentSeries, ParameterSeries, SirdState
from .exceptions import InvalidInput

__all__ = ["extract_parameters", "step", "r0", "rollout"]


def extract_parameters(series: CompartmentSeries) -> ParameterSeries:
    """Invert the difference equations to get one rate triple per day.

    Entry ``t`` uses days ``t`` and ``t+1``, so the output is one shorter than
    the input.  Days with ``I(t) == 0`` or ``S(t) == 0`` are undefined (NaN);
    negative raw values, which come from recounts in the source data, are
    clamped to 0 and flagged.
    """
    if len(series) < 2:
        raise InvalidInput("parameter extraction needs at least two observations")
    n = series.n
    S, I, R, D = series.S, series.I, series.R, series.D
    s0, i0 = S[:-1], I[:-1]
    ok = (i0 > 0) & (s0 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(ok, -n * np.diff(S) / (s0 * i0), np.nan)
        gamma_r = np.where(ok, np.diff(R) / i0, np.nan)
        gamma_d = np.where(ok, np.diff(D) / i0, np.nan)
    raw = np.column_stack([beta, gamma_r, gamma_d])
    clamped = ok[:, None] & (raw < 0)
    raw[clamped] = 0.0
    return ParameterSeries(series.dates[:-1], raw[:, 0], raw[:, 1], raw[:, 2],
                           defined=ok, clamped=clamped)


def step(state: SirdState, beta: float, gamma_r: float, gamma_d: float) -> SirdState:
    """Advance ``state`` by one day.

    Flows are capped so no compartment goes negative: new infections at
    ``S(t)``, and the combined removal from I at ``I(t)``, split between R
    and D in proportion to their rates.  Conservation of ``n`` is kept
    because every capped flow is moved between two compartments.
    """
    if beta < 0 or gamma_r < 0 or gamma_d < 0:
        raise InvalidInput("rates must be non-negative")
    s, i, r, d, n = state.s, state.i, state.r, state.d, state.n
    infections = min(beta * s * i / n, s)
    to_r = gamma_r * i
    to_d = gamma_d * i
    removed = to_r + to_d
    if removed > i:
        scale = i / removed
        to_r *= scale
        to_d *= scale
    s_new = s - infections
    i_new = i + infections - to_r - to_d
    # rounding can leave a -1e-17 residue after a fully capped outflow
    return SirdState(max(s_new, 0.0), max(i_new, 0.0), r + to_r, d + to_d, n)


def rollout(state: SirdState, beta, gamma_r, gamma_d) -> list:
    """Step repeatedly along rate paths; returns the states after each step."""
    out = []
    for b, gr, gd in zip(beta, gamma_r, gamma_d):
        state = step(state, float(b), float(gr), float(gd))
        out.append(state)
    return out


def r0(beta, gamma_r, gamma_d):
    """Basic reproduction number ``beta / (gamma_r + gamma_d)``.

    Works on scalars or arrays.  NaN marks an undefined value (zero removal
    rate).
    """
    beta = np.asarray(beta, dtype=float)
    removal = np.asarray(gamma_r, dtype=float) + np.asarray(gamma_d, dtype=float)
    if np.any(beta < 0) or np.any(removal < 0):
        raise InvalidInput("rates must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(removal > 0, beta / np.where(removal > 0, removal, 1.0), np.nan)
    return float(value) if value.ndim == 0 else value
