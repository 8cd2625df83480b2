"""Straight-from-formula evaluation statistics, written with plain Python
loops and no shared code with the package. Used as the independent oracle
for the metric implementations.
"""

import math


def nse_oracle(obs, pred):
    n = len(obs)
    obar = sum(obs) / n
    num = sum((obs[i] - pred[i]) ** 2 for i in range(n))
    den = sum((o - obar) ** 2 for o in obs)
    return 1.0 - num / den


def pbias_oracle(obs, pred):
    n = len(obs)
    return 100.0 * sum(pred[i] - obs[i] for i in range(n)) / sum(obs)


def rsr_oracle(obs, pred):
    n = len(obs)
    obar = sum(obs) / n
    rmse = math.sqrt(sum((pred[i] - obs[i]) ** 2 for i in range(n)) / n)
    s_obs = math.sqrt(sum((o - obar) ** 2 for o in obs) / (n - 1))
    return rmse / s_obs


def r_squared_oracle(obs, pred):
    n = len(obs)
    obar = sum(obs) / n
    pbar = sum(pred) / n
    cov = sum((obs[i] - obar) * (pred[i] - pbar) for i in range(n)) / n
    so = math.sqrt(sum((o - obar) ** 2 for o in obs) / n)
    sp = math.sqrt(sum((p - pbar) ** 2 for p in pred) / n)
    r = cov / (so * sp)
    return r * r
