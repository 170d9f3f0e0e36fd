"""Deterministic discrete-time SEIRD dynamics driven by a weekly transmission rate."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import DynamicsError
from .params import EpiParams

__all__ = ["CompartmentState", "Trajectory", "DynamicsError", "step", "simulate", "initial_state"]

COMPARTMENTS = ("S", "E", "I", "R_S", "R_D", "D")
_CONS_TOL = 1e-12


@dataclass(frozen=True)
class CompartmentState:
    """Population fractions (S, E, I, R_S, R_D, D) on one day."""

    s: float
    e: float
    i: float
    r_s: float
    r_d: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.e, self.i, self.r_s, self.r_d, self.d])

    @classmethod
    def from_array(cls, arr) -> "CompartmentState":
        return cls(*(float(x) for x in arr))

    def validate(self) -> None:
        arr = self.as_array()
        if np.any(arr < -_CONS_TOL) or np.any(arr > 1.0 + _CONS_TOL):
            raise ValueError(f"compartment outside [0, 1]: {arr}")
        if abs(arr.sum() - 1.0) >= _CONS_TOL:
            raise ValueError(f"compartments sum to {arr.sum()!r}, not 1")


@dataclass
class Trajectory:
    """Daily states plus the derived infection flow and reproduction numbers."""

    states: np.ndarray  # (n_days + 1, 6), states[0] = initial condition
    nu: np.ndarray  # (n_days,) new infections, persons/day
    r0_by_week: np.ndarray  # (n_weeks,)
    population: float

    @property
    def n_days(self) -> int:
        return self.nu.shape[0]

    @property
    def re(self) -> np.ndarray:
        """Effective reproduction number S(t) * R0(w(t)) per day."""
        r0_daily = np.repeat(self.r0_by_week, 7)[: self.n_days]
        return self.states[:-1, 0] * r0_daily

    def new_deaths(self, mu: float) -> np.ndarray:
        """Expected deaths incident per day, N * mu * R_D(t)."""
        return self.population * mu * self.states[:-1, 4]

    def final_state(self) -> CompartmentState:
        return CompartmentState.from_array(self.states[-1])

    def to_csv(self, path_or_buf) -> None:
        n = self.n_days
        r0_daily = np.repeat(self.r0_by_week, 7)[:n]
        header = "day,S,E,I,R_S,R_D,D,nu,Re"
        rows = np.column_stack(
            [np.arange(n), self.states[:-1], self.nu, self.states[:-1, 0] * r0_daily]
        )
        if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
            np.savetxt(path_or_buf, rows, delimiter=",", header=header, comments="")
        else:
            buf = io.StringIO()
            np.savetxt(buf, rows, delimiter=",", header=header, comments="")
            path_or_buf.write(buf.getvalue())


def step(state: CompartmentState, beta: float, params: EpiParams) -> CompartmentState:
    """One day of the forward-Euler SEIRD update."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    out = kernels.seird_step(
        state.as_array(), beta, params.delta, params.gamma, params.mu, params.iota
    )
    return CompartmentState(*out)


def simulate(
    init: CompartmentState,
    r0_by_week,
    params: EpiParams,
    population: float,
    n_days: int | None = None,
) -> Trajectory:
    """Run the SEIRD recursion with beta(t) = gamma * R0(w(t)), weeks of 7 days.

    The horizon defaults to 7 days per week; a shorter n_days truncates the
    final week.
    """
    r0_by_week = np.asarray(r0_by_week, dtype=np.float64)
    if np.any(r0_by_week < 0) or np.any(r0_by_week > params.r0_max):
        raise ValueError(f"r0 values must lie in [0, {params.r0_max}]")
    if n_days is None:
        n_days = 7 * r0_by_week.shape[0]
    if (n_days + 6) // 7 != r0_by_week.shape[0]:
        raise ValueError("r0_by_week length does not match n_days")
    beta_daily = params.gamma * np.repeat(r0_by_week, 7)[:n_days]
    states, nu_frac = kernels.seird_simulate(
        init.as_array(), beta_daily, params.delta, params.gamma, params.mu, params.iota
    )
    return Trajectory(
        states=states, nu=population * nu_frac, r0_by_week=r0_by_week, population=population
    )


def initial_state(x0, p: float = 0.05, iota: float = 0.01) -> CompartmentState:
    """Map a 5-simplex point to the day-0 compartments.

    p bounds the fraction of the population beyond fully-susceptible at day 0;
    the recovered/deceased mass is split by survival (1 - iota) vs death, with
    the pre-death pool fed from the x0 recovered slot.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (5,):
        raise ValueError("x0 must have 5 components (S, E, I, R, D)")
    if np.any(x0 < 0) or abs(x0.sum() - 1.0) > 1e-9:
        raise ValueError("x0 must lie on the simplex")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    xs, xe, xi, xr, xd = x0
    return CompartmentState(
        s=(1.0 - p) + p * xs,
        e=p * xe,
        i=p * xi,
        r_s=p * (xr + xd) * (1.0 - iota),
        r_d=p * xr * iota,
        d=p * xd * iota,
    )
