"""Cart-pole balancing, classic-control constants, explicit Euler at dt=0.02.

Observation: [cart position, cart velocity, pole angle, pole angular
velocity]. Actions: 0 pushes left, 1 pushes right. Reward is +1 for every
step taken (including the terminating one); episodes end when the pole
falls past 12 degrees, the cart leaves +-2.4, or at the 500-step horizon.
"""

from __future__ import annotations

import numpy as np

from .base import DiscreteSpace, EnvSpec, EnvState, freeze_done_rows, make_rngs

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_POLE = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_POLE
FORCE_MAG = 10.0
DT = 0.02
THETA_LIMIT = 12.0 * np.pi / 180.0
X_LIMIT = 2.4

SPEC = EnvSpec(
    env_id="cartpole",
    obs_dim=4,
    action_space=DiscreteSpace(2),
    horizon=500,
    reference_return=500.0,
    gamma=1.0,
)


def reset_batch(seeds):
    rngs = make_rngs(seeds)
    s = np.stack(
        [rng.uniform(-0.05, 0.05, size=4).astype(np.float32) for rng in rngs]
    )
    b = s.shape[0]
    state = EnvState(
        env_id="cartpole",
        data={"s": s},
        step=np.zeros(b, dtype=np.int32),
        done=np.zeros(b, dtype=bool),
    )
    return state, s.copy()


def step_batch(state: EnvState, actions):
    s = state.data["s"]
    active = ~state.done
    x, x_dot, theta, theta_dot = s[:, 0], s[:, 1], s[:, 2], s[:, 3]

    force = np.where(np.asarray(actions) == 1, FORCE_MAG, -FORCE_MAG).astype(np.float32)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot**2 * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_POLE * (4.0 / 3.0 - MASS_POLE * cos_t**2 / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS

    new_s = np.stack(
        [
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ],
        axis=1,
    ).astype(np.float32)
    new_s = freeze_done_rows(s, new_s, active)

    step = state.step + active.astype(np.int32)
    fell = (np.abs(new_s[:, 0]) > X_LIMIT) | (np.abs(new_s[:, 2]) > THETA_LIMIT)
    done = state.done | (active & (fell | (step >= SPEC.horizon)))
    reward = active.astype(np.float32)

    new_state = EnvState("cartpole", {"s": new_s}, step, done)
    return new_state, new_s.copy(), reward, done.copy()


def scripted_action(obs):
    """PD balance law: push toward the pole's lean, with cart-recentering terms."""
    obs = np.atleast_2d(obs)
    score = 6.0 * obs[:, 2] + 1.0 * obs[:, 3] + 0.08 * obs[:, 0] + 0.25 * obs[:, 1]
    return (score > 0.0).astype(np.int64)
