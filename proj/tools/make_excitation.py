"""Writes the synthetic excitation records under data/.

ground_motion.csv: 30 s of stationary Kanai-Tajimi filtered white noise under a
Jennings-type envelope, sampled at 0.02 s and scaled to a peak of 3.42 m/s^2.
It stands in for the El-Centro NS record (same sampling step, duration and
peak), which is not redistributed here.

nes_sweep.csv, nes_burst.csv: base accelerations of a 2.7 mm, 5 Hz base
displacement; the first sweeps 3-7 Hz, the second is a 5 Hz sine whose
amplitude rises and falls.
"""

import argparse
from pathlib import Path

import numpy as np
from scipy import signal

PEAK_GROUND_ACCEL = 3.42  # m/s^2
DT = 0.02


def ground_motion(seed: int, duration: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    fine = DT / 10
    t = np.arange(0.0, duration + fine / 2, fine)
    noise = rng.standard_normal(t.size) / np.sqrt(fine)
    wg, zg = 15.6, 0.6
    filt = signal.lti([2 * zg * wg, wg**2], [1.0, 2 * zg * wg, wg**2])
    _, acc, _ = signal.lsim(filt, noise, t)
    env = np.where(t < 1.5, (t / 1.5) ** 2, np.where(t < 10.0, 1.0, np.exp(-0.25 * (t - 10.0))))
    acc = (acc * env)[::10]
    t = t[::10]
    return t, acc * PEAK_GROUND_ACCEL / np.max(np.abs(acc))


def nes_records(duration: float = 4.0, dt: float = 1.0 / 4096) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.arange(0.0, duration + dt / 2, dt)
    amp = 2.7e-3
    f = 3.0 + 4.0 * t / duration
    phase = 2 * np.pi * np.cumsum(f) * dt
    sweep = -((2 * np.pi * f) ** 2) * amp * np.sin(phase)
    burst = -((2 * np.pi * 5.0) ** 2) * amp * np.sin(np.pi * t / duration) * np.sin(2 * np.pi * 5.0 * t)
    return t, sweep, burst


def write(path: Path, t: np.ndarray, v: np.ndarray) -> None:
    with path.open("w") as f:
        f.write("t,value\n")
        for a, b in zip(t, v):
            f.write(f"{a:.6f},{b:.9g}\n")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    ap.add_argument("--seed", type=int, default=1940)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    write(args.out / "ground_motion.csv", *ground_motion(args.seed))
    t, sweep, burst = nes_records()
    write(args.out / "nes_sweep.csv", t, sweep)
    write(args.out / "nes_burst.csv", t, burst)


if __name__ == "__main__":
    main()
