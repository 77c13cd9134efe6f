"""Single-life Breakout on a 10x10 grid with channelled observations.

Channels (last axis): paddle, ball, ball trail, bricks; the observation is
the flattened (10, 10, 4) grid, 400 values of 0/1. Three brick rows sit at
the top; the ball moves one cell diagonally per step, bouncing off walls,
bricks (+1 reward each, brick removed) and the two-cell paddle on the
bottom row. Clearing the wall refills it. Missing the ball ends the
episode. Every survived step also pays a small keep-alive bonus (0.01) so
populations that merely track the ball see a fitness gradient at desk
population sizes. The ball's spawn column and direction are the only
randomness, drawn at reset.
"""

from __future__ import annotations

import numpy as np

from .base import DiscreteSpace, EnvSpec, EnvState, make_rngs

SIZE = 10
BRICK_ROWS = (1, 2, 3)
PADDLE_ROW = SIZE - 1
PADDLE_WIDTH = 2
BALL_SPAWN_ROW = 4
N_CHANNELS = 4
ALIVE_BONUS = 0.01

SPEC = EnvSpec(
    env_id="gridbreakout",
    obs_dim=SIZE * SIZE * N_CHANNELS,
    action_space=DiscreteSpace(3),  # left, stay, right
    horizon=200,
    reference_return=28.0,
    gamma=1.0,
)


def _obs(data):
    b = data["paddle_x"].shape[0]
    grid = np.zeros((b, SIZE, SIZE, N_CHANNELS), dtype=np.float32)
    rows = np.arange(b)
    for offset in range(PADDLE_WIDTH):
        grid[rows, PADDLE_ROW, data["paddle_x"] + offset, 0] = 1.0
    grid[rows, data["ball_y"], data["ball_x"], 1] = 1.0
    grid[rows, data["last_y"], data["last_x"], 2] = 1.0
    grid[..., 3] = data["bricks"]
    return grid.reshape(b, -1)


def _fresh_bricks(b):
    bricks = np.zeros((b, SIZE, SIZE), dtype=np.float32)
    for r in BRICK_ROWS:
        bricks[:, r, :] = 1.0
    return bricks


def reset_batch(seeds):
    rngs = make_rngs(seeds)
    b = len(rngs)
    ball_x = np.array([rng.integers(0, SIZE) for rng in rngs], dtype=np.int32)
    dx_draw = np.array([rng.integers(0, 2) for rng in rngs], dtype=np.int32) * 2 - 1
    dx = np.where(ball_x == 0, 1, np.where(ball_x == SIZE - 1, -1, dx_draw)).astype(np.int32)
    data = {
        "paddle_x": np.full(b, SIZE // 2 - 1, dtype=np.int32),
        "ball_y": np.full(b, BALL_SPAWN_ROW, dtype=np.int32),
        "ball_x": ball_x,
        "dy": np.ones(b, dtype=np.int32),
        "dx": dx,
        "last_y": np.full(b, BALL_SPAWN_ROW, dtype=np.int32),
        "last_x": ball_x.copy(),
        "bricks": _fresh_bricks(b),
    }
    state = EnvState("gridbreakout", data, np.zeros(b, dtype=np.int32), np.zeros(b, dtype=bool))
    return state, _obs(data)


def step_batch(state: EnvState, actions):
    d = state.data
    active = ~state.done
    b = state.batch
    rows = np.arange(b)
    act = np.asarray(actions, dtype=np.int32)

    paddle = np.clip(d["paddle_x"] + np.where(active, act - 1, 0), 0, SIZE - PADDLE_WIDTH)

    by, bx, dy, dx = d["ball_y"].copy(), d["ball_x"].copy(), d["dy"].copy(), d["dx"].copy()
    bricks = d["bricks"].copy()

    nx = bx + dx
    side = (nx < 0) | (nx > SIZE - 1)
    dx = np.where(side, -dx, dx)
    nx = np.where(side, bx + dx, nx)

    ny = by + dy
    top = ny < 0
    dy = np.where(top, -dy, dy)
    ny = np.where(top, by + dy, ny)
    ny = np.clip(ny, 0, SIZE - 1)  # frozen rows may hold out-of-range proposals

    hit_brick = active & (bricks[rows, ny, nx] > 0.0)
    bricks[rows[hit_brick], ny[hit_brick], nx[hit_brick]] = 0.0
    dy = np.where(hit_brick, -dy, dy)
    ny = np.where(hit_brick, by, ny)

    at_bottom = (ny == PADDLE_ROW) & ~hit_brick
    caught = at_bottom & (nx >= paddle) & (nx < paddle + PADDLE_WIDTH)
    dy = np.where(caught, -1, dy)
    ny = np.where(caught, by, ny)
    missed = active & at_bottom & ~caught

    # Frozen rows keep everything as-is.
    new_data = {
        "paddle_x": np.where(active, paddle, d["paddle_x"]),
        "ball_y": np.where(active, ny, d["ball_y"]),
        "ball_x": np.where(active, nx, d["ball_x"]),
        "dy": np.where(active, dy, d["dy"]),
        "dx": np.where(active, dx, d["dx"]),
        "last_y": np.where(active, by, d["last_y"]),
        "last_x": np.where(active, bx, d["last_x"]),
        "bricks": np.where(active[:, None, None], bricks, d["bricks"]),
    }

    cleared = active & (new_data["bricks"].sum(axis=(1, 2)) == 0.0)
    if cleared.any():
        refill = _fresh_bricks(b)
        new_data["bricks"] = np.where(cleared[:, None, None], refill, new_data["bricks"])

    step = state.step + active.astype(np.int32)
    survived = active & ~missed
    reward = hit_brick.astype(np.float32) + ALIVE_BONUS * survived.astype(np.float32)
    done = state.done | missed | (active & (step >= SPEC.horizon))

    new_state = EnvState("gridbreakout", new_data, step, done)
    return new_state, _obs(new_data), reward, done.copy()


def _reflect_column(x):
    p = np.mod(x, 2 * (SIZE - 1))
    return np.where(p > SIZE - 1, 2 * (SIZE - 1) - p, p)


def _steps_toward_interval(target, paddle_x):
    # Distance until the target column sits over the paddle's two cells.
    right_edge = paddle_x + PADDLE_WIDTH - 1
    return np.where(target < paddle_x, target - paddle_x,
                    np.where(target > right_edge, target - right_edge, 0))


def scripted_action(obs):
    """Move the paddle toward the ball's predicted landing column.

    Velocity is read off the ball/trail planes; the landing column assumes
    pure wall reflections (brick bounces re-predict on later steps). At
    spawn the horizontal direction is hidden; aiming at the farther of the
    two candidate landings first is safe for both outcomes.
    """
    obs = np.atleast_2d(obs)
    b = obs.shape[0]
    grid = obs.reshape(b, SIZE, SIZE, N_CHANNELS)
    paddle_x = grid[:, PADDLE_ROW, :, 0].argmax(axis=1)
    ball_pos = grid[:, :, :, 1].reshape(b, -1).argmax(axis=1)
    ball_y, ball_x = ball_pos // SIZE, ball_pos % SIZE
    trail_pos = grid[:, :, :, 2].reshape(b, -1).argmax(axis=1)
    trail_y, trail_x = trail_pos // SIZE, trail_pos % SIZE
    # Zero displacement means spawn or an in-place bounce; balls low on the
    # grid just bounced off the paddle (rising), high ones are falling.
    dy = np.where(ball_y == trail_y, np.where(ball_y >= 7, -1, 1), np.sign(ball_y - trail_y))
    dx_known = ball_x != trail_x
    dx = np.sign(ball_x - trail_x)
    steps = PADDLE_ROW - ball_y
    landing = _reflect_column(ball_x + dx * steps)
    cand_r = _reflect_column(ball_x + steps)
    cand_l = _reflect_column(ball_x - steps)
    move_r = _steps_toward_interval(cand_r, paddle_x)
    move_l = _steps_toward_interval(cand_l, paddle_x)
    farther = np.where(
        np.abs(move_r) > np.abs(move_l), cand_r,
        np.where(np.abs(move_l) > np.abs(move_r), cand_l, paddle_x),
    )
    goal = np.where(dy > 0, np.where(dx_known, landing, farther), SIZE // 2 - 1)
    return (np.sign(_steps_toward_interval(goal, paddle_x)) + 1).astype(np.int64)
