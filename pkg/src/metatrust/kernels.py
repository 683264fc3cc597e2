"""Hot inner loops.

Every kernel exists twice: a loop form compiled with numba and a numpy
form used when numba is disabled (see :mod:`metatrust._accel`). The public
names at the bottom of the module point at whichever path is active; the
``*_jit`` and ``*_np`` names stay importable for parity tests and the
benchmark.
"""
from __future__ import annotations

import math

import numpy as np

from metatrust._accel import jit, select

# ---------------------------------------------------------------- variance


def _population_variance_loop(x):
    # Welford; single pass, stable for long windows
    n = x.shape[0]
    mean = 0.0
    m2 = 0.0
    for i in range(n):
        d = x[i] - mean
        mean += d / (i + 1)
        m2 += d * (x[i] - mean)
    return m2 / n


def population_variance_np(x: np.ndarray) -> float:
    return float(np.var(x))


population_variance_jit = jit(_population_variance_loop)

# ---------------------------------------------------------------- GAE


def _gae_loop(rewards, values, dones, gamma, lam):
    n = rewards.shape[0]
    deltas = np.empty(n)
    adv = np.empty(n)
    running = 0.0
    for i in range(n - 1, -1, -1):
        live = 1.0 - dones[i]
        deltas[i] = rewards[i] + gamma * values[i + 1] * live - values[i]
        running = deltas[i] + gamma * lam * live * running
        adv[i] = running
    return deltas, adv


def gae_np(rewards, values, dones, gamma, lam):
    live = 1.0 - dones
    deltas = rewards + gamma * values[1:] * live - values[:-1]
    decay = (gamma * lam * live).tolist()
    d = deltas.tolist()
    adv = [0.0] * len(d)
    running = 0.0
    for i in range(len(d) - 1, -1, -1):
        running = d[i] + decay[i] * running
        adv[i] = running
    return deltas, np.asarray(adv, dtype=np.float64)


gae_jit = jit(_gae_loop)

# ---------------------------------------------------------------- sample weights


def _td_weights_loop(deltas, sigma_ref):
    n = deltas.shape[0]
    mean = 0.0
    for i in range(n):
        mean += deltas[i]
    mean /= n
    w = np.empty(n)
    total = 0.0
    for i in range(n):
        w[i] = sigma_ref / (sigma_ref + abs(deltas[i] - mean))
        total += w[i]
    scale = n / total
    for i in range(n):
        w[i] *= scale
    return w


def td_weights_np(deltas, sigma_ref):
    raw = sigma_ref / (sigma_ref + np.abs(deltas - deltas.mean()))
    return raw * (deltas.shape[0] / raw.sum())


td_weights_jit = jit(_td_weights_loop)

# ---------------------------------------------------------------- dynamics

POINTMASS_DT = 0.1
POINTMASS_X_MAX = 2.0
POINTMASS_V_MAX = 1.0

PENDULUM_G = 10.0
PENDULUM_M = 1.0
PENDULUM_L = 1.0
PENDULUM_DT = 0.05
PENDULUM_MAX_SPEED = 8.0

VALLEY_STEP = 0.03
VALLEY_RIDGE_AT = 0.8
VALLEY_RIDGE_WIDTH = 0.05
VALLEY_RIDGE_HEIGHT = 3.0
VALLEY_CLIFF_AT = 0.9
VALLEY_CLIFF_REWARD = -50.0
VALLEY_FLOOR = -3.0
VALLEY_SLOPE = 0.1


def _pointmass_step(x, v, a):
    reward = -abs(x) - 0.01 * a * a
    v2 = min(max(v + POINTMASS_DT * a, -POINTMASS_V_MAX), POINTMASS_V_MAX)
    x2 = x + POINTMASS_DT * v2
    if x2 > POINTMASS_X_MAX:
        x2 = POINTMASS_X_MAX
        v2 = 0.0
    elif x2 < -POINTMASS_X_MAX:
        x2 = -POINTMASS_X_MAX
        v2 = 0.0
    return x2, v2, reward


def _wrap_angle(th):
    return ((th + math.pi) % (2.0 * math.pi)) - math.pi


def _pendulum_step(th, w, u):
    ang = _wrap_angle(th)
    reward = -(ang * ang + 0.1 * w * w + 0.001 * u * u)
    acc = 3.0 * PENDULUM_G / (2.0 * PENDULUM_L) * math.sin(th) + 3.0 / (PENDULUM_M * PENDULUM_L**2) * u
    w2 = min(max(w + acc * PENDULUM_DT, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
    th2 = _wrap_angle(th + w2 * PENDULUM_DT)
    return th2, w2, reward


def _valley_step(x, a):
    """Returns (next position, reward, terminated)."""
    if x > VALLEY_CLIFF_AT:
        return x, VALLEY_CLIFF_REWARD, True
    z = (x - VALLEY_RIDGE_AT) / VALLEY_RIDGE_WIDTH
    reward = VALLEY_RIDGE_HEIGHT * math.exp(-z * z) - VALLEY_SLOPE * abs(x - VALLEY_RIDGE_AT) - 0.01 * a * a
    x2 = max(x + VALLEY_STEP * a, VALLEY_FLOOR)
    return x2, reward, False


pointmass_step_jit = jit(_pointmass_step)
_wrap_angle_jit = jit(_wrap_angle)


def _pendulum_step_jit_src(th, w, u):
    ang = _wrap_angle_jit(th)
    reward = -(ang * ang + 0.1 * w * w + 0.001 * u * u)
    acc = 3.0 * PENDULUM_G / (2.0 * PENDULUM_L) * math.sin(th) + 3.0 / (PENDULUM_M * PENDULUM_L**2) * u
    w2 = min(max(w + acc * PENDULUM_DT, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
    th2 = _wrap_angle_jit(th + w2 * PENDULUM_DT)
    return th2, w2, reward


pendulum_step_jit = jit(_pendulum_step_jit_src)
valley_step_jit = jit(_valley_step)

# ---------------------------------------------------------------- policy forward


def _forward_single_loop(flat, sizes, obs):
    # sizes = [in, h1, ..., hk, act]; layout documented in learner.ParamLayout
    n_hidden = sizes.shape[0] - 2
    h = obs.copy()
    off = 0
    for layer in range(n_hidden):
        n_in = sizes[layer]
        n_out = sizes[layer + 1]
        out = np.empty(n_out)
        for j in range(n_out):
            acc = flat[off + n_out * n_in + j]
            for k in range(n_in):
                acc += flat[off + j * n_in + k] * h[k]
            out[j] = math.tanh(acc)
        off += n_out * n_in + n_out
        h = out
    n_last = sizes[n_hidden]
    n_act = sizes[n_hidden + 1]
    mean = np.empty(n_act)
    for j in range(n_act):
        acc = flat[off + n_act * n_last + j]
        for k in range(n_last):
            acc += flat[off + j * n_last + k] * h[k]
        mean[j] = acc
    off += n_act * n_last + n_act
    value = flat[off + n_last]
    for k in range(n_last):
        value += flat[off + k] * h[k]
    off += n_last + 1
    log_std = flat[off:off + n_act].copy()
    return mean, log_std, value


def forward_single_np(flat, sizes, obs):
    n_hidden = sizes.shape[0] - 2
    h = obs
    off = 0
    for layer in range(n_hidden):
        n_in, n_out = int(sizes[layer]), int(sizes[layer + 1])
        w = flat[off:off + n_out * n_in].reshape(n_out, n_in)
        b = flat[off + n_out * n_in:off + n_out * n_in + n_out]
        h = np.tanh(w @ h + b)
        off += n_out * n_in + n_out
    n_last, n_act = int(sizes[n_hidden]), int(sizes[n_hidden + 1])
    w = flat[off:off + n_act * n_last].reshape(n_act, n_last)
    mean = w @ h + flat[off + n_act * n_last:off + n_act * n_last + n_act]
    off += n_act * n_last + n_act
    value = float(flat[off:off + n_last] @ h + flat[off + n_last])
    off += n_last + 1
    return mean, flat[off:off + n_act].copy(), value


forward_single_jit = jit(_forward_single_loop)

# ---------------------------------------------------------------- active path

population_variance = select(population_variance_jit, population_variance_np)
gae = select(gae_jit, gae_np)
td_weights = select(td_weights_jit, td_weights_np)
pointmass_step = select(pointmass_step_jit, _pointmass_step)
pendulum_step = select(pendulum_step_jit, _pendulum_step)
valley_step = select(valley_step_jit, _valley_step)
forward_single = select(forward_single_jit, forward_single_np)
