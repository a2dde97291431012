"""Regenerates t_test.json with 50-digit arithmetic."""
import json
import random

import mpmath as mp

mp.mp.dps = 50


def two_sided_p(t, df):
    t, df = mp.mpf(t), mp.mpf(df)
    return mp.betainc(df / 2, mp.mpf(1) / 2, 0, df / (df + t * t), regularized=True)


def pooled(a, b):
    a = [mp.mpf(x) for x in a]
    b = [mp.mpf(x) for x in b]
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    ss = sum((x - ma) ** 2 for x in a) + sum((x - mb) ** 2 for x in b)
    df = na + nb - 2
    se = mp.sqrt(ss / df * (mp.mpf(1) / na + mp.mpf(1) / nb))
    return (ma - mb) / se, df


rng = random.Random(20191)
statistics = []
for df in [1, 2, 3, 5, 8, 13, 21, 29, 58, 100, 528, 998]:
    for t in [0.0, 0.1, 0.5, 1.0, 1.96, 2.5, 3.7, 6.0]:
        statistics.append({"t": t, "df": df, "p": float(two_sided_p(t, df))})

samples = []
for na, nb, shift in [(3, 3, 0.0), (5, 8, 0.4), (30, 500, 0.5), (30, 500, -0.2), (500, 500, 0.05), (12, 7, 1.5), (2, 2, 3.0)]:
    a = [round(rng.gauss(shift, 1.0), 6) for _ in range(na)]
    b = [round(rng.gauss(0.0, 1.0), 6) for _ in range(nb)]
    t, df = pooled(a, b)
    samples.append({"a": a, "b": b, "t": float(t), "df": df, "p": float(two_sided_p(t, df))})

with open("t_test.json", "w") as f:
    json.dump({"statistics": statistics, "samples": samples}, f, indent=1)
