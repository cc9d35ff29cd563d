"""Regenerate the bundled clinical-style benchmark fixtures.

Each CSV mimics the row count, factor/numeric column mix, censoring share,
and time scale of a well-known public survival benchmark, with outcomes
drawn from a planted exponential proportional-hazard model so that ground
truth is known.  Running this script rewrites the CSVs deterministically.

Usage: python data/make_datasets.py [out_dir]
"""

from __future__ import annotations

import csv
import os
import sys

import numpy as np


def _draw_factor(rng, levels, probs, n):
    return rng.choice(levels, size=n, p=probs)


def make_dataset(path, n, factors, numerics, base_log_rate, censor_rate,
                 seed, round_time=3):
    """Write one fixture CSV.

    factors: list of (name, levels, probs, {level: effect}).
    numerics: list of (name, mean, sd, effect per unit z).
    The log hazard of each row is base_log_rate plus the summed effects;
    event times are exponential at that rate, censoring is exponential at
    censor_rate, and the recorded time is the earlier of the two.
    """
    rng = np.random.default_rng(seed)
    cols = {}
    G = np.full(n, float(base_log_rate))
    for name, levels, probs, effects in factors:
        vals = _draw_factor(rng, levels, probs, n)
        cols[f"fac_{name}"] = vals
        G += np.array([effects.get(v, 0.0) for v in vals])
    for name, mean, sd, effect in numerics:
        z = rng.standard_normal(n)
        cols[f"num_{name}"] = np.round(mean + sd * z, 4)
        G += effect * z
    t_event = rng.exponential(1.0 / np.exp(G))
    t_cens = rng.exponential(1.0 / censor_rate, size=n)
    time = np.minimum(t_event, t_cens)
    event = (t_event <= t_cens).astype(int)
    time = np.maximum(np.round(time, round_time), 10.0 ** -round_time)
    header = ["pid", "event", "time", *cols.keys()]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n):
            writer.writerow([i, event[i], f"{time[i]:.{round_time}f}",
                             *[cols[c][i] for c in cols]])
    return event.mean(), G


def main(out_dir=None):
    out_dir = out_dir or os.path.dirname(os.path.abspath(__file__))

    # 394 rows, 5 factors / 2 numerics, ~39% events, times on a months-like
    # scale; moderate planted signal.
    ev, _ = make_dataset(
        os.path.join(out_dir, "retinopathy.csv"),
        n=394,
        factors=[
            ("laser", ["xenon", "argon"], [0.5, 0.5], {"xenon": 0.3696}),
            ("eyetype", ["left", "right"], [0.5, 0.5], {"left": 0.168}),
            ("treat", ["0", "1"], [0.5, 0.5], {"1": -0.924}),
            ("agegrp", ["juvenile", "adult"], [0.55, 0.45], {"adult": 0.3024}),
            ("riskgrp", ["low", "mid", "high"], [0.35, 0.4, 0.25],
             {"mid": 0.504, "high": 1.2096}),
        ],
        numerics=[
            ("age", 30.0, 12.0, 0.4032),
            ("acuity", 50.0, 15.0, -0.6384),
        ],
        base_log_rate=-4.05,
        censor_rate=0.05,
        seed=20394,
    )
    print(f"retinopathy.csv event rate {ev:.3f}")

    # 146 rows, 4 factors / 3 numerics, ~37% events.
    ev, _ = make_dataset(
        os.path.join(out_dir, "stagec.csv"),
        n=146,
        factors=[
            ("grade", ["g1", "g2", "g3"], [0.3, 0.45, 0.25],
             {"g2": 0.52, "g3": 1.20}),
            ("ploidy", ["diploid", "tetraploid", "aneuploid"],
             [0.45, 0.35, 0.2], {"tetraploid": 0.38, "aneuploid": 0.82}),
            ("eet", ["no", "yes"], [0.4, 0.6], {"yes": -0.45}),
            ("gleason", ["low", "high"], [0.55, 0.45], {"high": 0.60}),
        ],
        numerics=[
            ("age", 62.0, 7.0, 0.27),
            ("g2pct", 12.0, 5.0, 0.50),
            ("pcdna", 4.0, 2.0, -0.33),
        ],
        base_log_rate=-3.40,
        censor_rate=0.105,
        seed=20146,
    )
    print(f"stagec.csv event rate {ev:.3f}")

    # 431 rows, 11 factors / 2 numerics, ~33% events.
    zinc_factors = [
        ("sex", ["m", "f"], [0.6, 0.4], {"m": 0.27}),
        ("smoke", ["never", "former", "current"], [0.4, 0.3, 0.3],
         {"former": 0.22, "current": 0.63}),
        ("alcohol", ["no", "yes"], [0.5, 0.5], {"yes": 0.38}),
        ("famhist", ["no", "yes"], [0.7, 0.3], {"yes": 0.45}),
        ("dysplasia", ["none", "mild", "severe"], [0.5, 0.3, 0.2],
         {"mild": 0.42, "severe": 0.98}),
        ("biopsy", ["normal", "abnormal"], [0.6, 0.4], {"abnormal": 0.52}),
        ("region", ["north", "south"], [0.5, 0.5], {"south": 0.18}),
        ("anemia", ["no", "yes"], [0.75, 0.25], {"yes": 0.30}),
        ("hpylori", ["neg", "pos"], [0.55, 0.45], {"pos": 0.22}),
        ("diet", ["poor", "adequate"], [0.45, 0.55], {"adequate": -0.38}),
        ("occupation", ["farm", "other"], [0.5, 0.5], {"farm": 0.15}),
    ]
    ev, _ = make_dataset(
        os.path.join(out_dir, "zinc.csv"),
        n=431,
        factors=zinc_factors,
        numerics=[
            ("zinclevel", 55.0, 14.0, -0.68),
            ("age", 55.0, 9.0, 0.33),
        ],
        base_log_rate=-4.20,
        censor_rate=0.068,
        seed=20431,
    )
    print(f"zinc.csv event rate {ev:.3f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
