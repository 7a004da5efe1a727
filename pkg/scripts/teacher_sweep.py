"""Train teachers at a few sizes and report their drop-vs-steps curves (no distillation).

    python3 scripts/teacher_sweep.py --arch 4x64 6x64 --steps 14000

Useful for picking a teacher whose curve is already flat in M before spending
time on distillation. Each run prints one line: arch, train seconds, final
loss, drop % at every M.
"""
import argparse
import time

import numpy as np

from tspdiff.denoiser import DenoiserConfig
from tspdiff.diffusion_schedule import make_schedule
from tspdiff.distill_trainer import TrainConfig, train_teacher
from tspdiff.sampler import sample_batch
from tspdiff.tsp_core import cost_drop_pct, make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", nargs="+", default=["4x64", "6x64"], help="LAYERSxWIDTH")
    ap.add_argument("--steps", type=int, default=14000, help="optimizer steps")
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--input-freqs", type=int, default=6)
    ap.add_argument("--n", type=int, default=10)
    args = ap.parse_args()

    train, test = make_dataset(args.n, 200, 1), make_dataset(args.n, 100, 2)
    schedule = make_schedule(1024)
    grid = [4, 8, 16, 32, 64]
    epochs = max(1, args.steps * args.batch_size // len(train))
    for arch in args.arch:
        layers, width = (int(v) for v in arch.split("x"))
        dcfg = DenoiserConfig(layers=layers, width=width, time_embed_dim=64, input_freqs=args.input_freqs)
        tcfg = TrainConfig(epochs=epochs, batch_size=args.batch_size, lr=args.lr, optimizer="adam",
                           augment=True, lr_schedule="cosine", log_every=10 ** 9)
        history = []
        start = time.perf_counter()
        params = train_teacher(train, tcfg, dcfg, history=history)
        secs = time.perf_counter() - start
        curve = []
        for M in grid:
            res = sample_batch(params, [it.instance for it in test], schedule, M, [[0, k] for k in range(len(test))])
            curve.append(np.mean([cost_drop_pct(r.tour.cost, it.tour.cost) for r, it in zip(res, test)]))
        print(f"{arch:>6} {secs:6.0f}s loss {np.mean(history[-200:]):.4f} drop% "
              + " ".join(f"M{M}={d:.2f}" for M, d in zip(grid, curve)))


if __name__ == "__main__":
    main()
