"""Quasi-static equilibria by direct energy minimization.

Runs Adam on the free canonical vertices of a groom until the summed
physics losses stop improving. This gives a reference equilibrium for a
given stiffness configuration without training anything, which is how
stiffness sweeps (bend, style, adhesion) are compared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import energy, grad
from .body import BodyState
from .energy import EnergyConfig, GroomRest
from .errors import ConfigError, NumericError
from .nn import adam_init, adam_step, lr_schedule
from .rotation import RigidTransform


@dataclass(frozen=True)
class RelaxResult:
    canonical_free: np.ndarray  # (S, V-1, 3) minimizer in the canonical frame
    world: np.ndarray  # (S, V, 3) same state in world space
    history: list  # logged rows of {"step", "total", per-term scalars}


def minimize_quasi_static(
    rest: GroomRest,
    cfg: EnergyConfig,
    head: RigidTransform | None = None,
    body_state: BodyState | None = None,
    x0: np.ndarray | None = None,
    steps: int = 1500,
    lr: float = 0.05,
    final_lr: float | None = None,
    log_every: int = 100,
) -> RelaxResult:
    """Minimize the quasi-static loss over free vertices with Adam.

    The step budget is fixed (no early stop) so sweeps over stiffness
    values get identical optimization effort. final_lr, when set, holds
    lr constant for the first 60% of the run (Adam steps are bounded by
    lr, so travel distance needs the full rate) and then decays
    geometrically to final_lr, tightening the last digits of the
    equilibrium without extra steps.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if lr <= 0 or (final_lr is not None and final_lr <= 0):
        raise ConfigError("learning rates must be positive")
    if head is None:
        head = rest.head_rest
    free_rest = np.asarray(rest.canonical)[:, 1:, :]
    x = np.array(free_rest if x0 is None else x0, dtype=np.float64)
    if x.shape != free_rest.shape:
        raise ConfigError(f"x0 shape {x.shape} does not match free vertices {free_rest.shape}")

    rates = lr_schedule(steps, lr, final_lr)
    opt = adam_init([x])
    history = []
    for step in range(steps):
        tape = grad.Tape()
        leaf = tape.leaf(x)
        state = energy.make_state(rest, leaf, head)
        total, scalars = energy.total_loss(state, cfg, body_state=body_state)
        try:
            tape.backward(total)
        except NumericError as e:
            raise NumericError(f"relaxation diverged at step {step}: {e}") from e
        if step % log_every == 0 or step == steps - 1:
            history.append({"step": step, "total": float(grad.value_of(total)), **scalars})
        [x] = adam_step([x], [leaf.grad], opt, lr=float(rates[step]))

    world = grad.value_of(energy.make_state(rest, x, head).positions)
    return RelaxResult(x, world, history)
