"""How reversed decoder positions encode "tokens remaining".

A decoder that reads its position embeddings backwards — target length
minus one down to zero — always knows how many tokens it has left, so
hitting the requested length is part of fitting the training data rather
than an extra constraint at decode time.  During training the countdown's
starting point is jittered by integer-truncated Gaussian noise, which
keeps generation robust when the requested length is a little off the
natural one.

Run:  python demos/tour_countdown_positions.py
"""

import numpy as np

from lenctl.positions import (SCHEME_FORWARD, SCHEME_REVERSE, PositionPlan,
                              position_indices, sample_noise_batch)


def show(title: str, indices: np.ndarray) -> None:
    print(f"{title:<38} {indices.tolist()}")


def main() -> None:
    steps = 10

    print("ten decoding steps under each position scheme:\n")
    forward = PositionPlan(SCHEME_FORWARD, max_index=63)
    show("forward (ordinary positions)", position_indices(forward, steps))

    for target in (8, 5, 3):
        plan = PositionPlan(SCHEME_REVERSE, max_index=63,
                            target_len=target, noise=0)
        show(f"countdown, target {target}", position_indices(plan, steps))
    print()
    print("the countdown reaches zero exactly at the requested length and")
    print("clamps there, so running past the target keeps reading index 0.")
    print()

    plan = PositionPlan(SCHEME_REVERSE, max_index=6, target_len=12, noise=0)
    show("countdown, target 12, ceiling 6", position_indices(plan, steps))
    print()
    print("targets beyond the embedding table clamp at the top index until")
    print("the countdown re-enters range — long requests degrade gently.")
    print()

    rng = np.random.default_rng(0)
    draws = sample_noise_batch(rng, 10000)
    values, counts = np.unique(draws, return_counts=True)
    print("training-time countdown jitter (10000 draws, truncated normal):")
    for value, count in zip(values, counts):
        print(f"  offset {value:+d}: {count / draws.size:6.1%}")
    print()

    batch_plan = PositionPlan(SCHEME_REVERSE, max_index=63,
                              target_len=np.array([6, 4, 5]),
                              noise=np.array([0, 1, -1]))
    print("a batched plan keeps one countdown per row (targets 6, 4, 5 with")
    print("jitter 0, +1, -1):")
    for row in position_indices(batch_plan, 7):
        print(" ", row.tolist())


if __name__ == "__main__":
    main()
