from __future__ import annotations

import numpy as np
import pytest

from sortblock import (
    DitConfig,
    Rng,
    init_network,
    inner_window,
    make_run,
    make_schedule,
    record_baseline,
)
from sortblock.dit import BlockIO


class AffineNetwork:
    """Synthetic network whose block outputs are affine in the timestep and
    independent of the input: out_i(t) = base_i + t * slope_i.

    All entries are small integers, the step stride is an integer, and every
    value stays far below 2**24, so block outputs, cache slopes, and linear
    extrapolations are all exact in float32 -- the caching engine must then
    reproduce the baseline bit for bit at any (K, rho).
    """

    def __init__(self, num_blocks=12, num_tokens=16, channels=8, seed=7):
        self.num_blocks = num_blocks
        self.num_tokens = num_tokens
        self.channels = channels
        self.eval_count = 0
        rng = Rng(seed)
        self.bases = []
        self.slopes = []
        for _ in range(num_blocks):
            base = np.array(
                [[(rng.next_u64() % 15) - 7 for _ in range(channels)] for _ in range(num_tokens)],
                dtype=np.float32,
            )
            slope = np.array(
                [[(rng.next_u64() % 7) - 3 for _ in range(channels)] for _ in range(num_tokens)],
                dtype=np.float32,
            )
            self.bases.append(base)
            self.slopes.append(slope)

    def _output(self, index, t):
        return self.bases[index] + np.float32(float(t)) * self.slopes[index]

    def forward(self, z, t, hook=None):
        x = z
        for i in range(self.num_blocks):
            if hook is None:
                out = self._output(i, t)
                self.eval_count += 1
                x = out
            else:
                def compute(i=i, x=x):
                    self.eval_count += 1
                    out = self._output(i, t)
                    return BlockIO(input=x, output=out, delta=out - x)

                x = hook(i, x, compute)
        return x


@pytest.fixture(scope="session")
def default_cfg():
    return DitConfig()


@pytest.fixture(scope="session")
def default_net(default_cfg):
    return init_network(default_cfg)


@pytest.fixture(scope="session")
def default_sched():
    return make_schedule(1000)


@pytest.fixture(scope="session")
def default_run_factory(default_sched):
    def factory(seed):
        return make_run(default_sched, 50, seed, (64, 64))

    return factory


@pytest.fixture(scope="session")
def default_window(default_run_factory):
    return inner_window(default_run_factory(0).step_list, 0.8)


@pytest.fixture(scope="session")
def baseline_factory(default_net, default_sched, default_run_factory):
    """Heavy baseline traces, computed once per seed and shared."""
    cache = {}

    def factory(seed):
        if seed not in cache:
            run = default_run_factory(seed)
            cache[seed] = record_baseline(default_net, run, default_sched, heavy=True)
        return cache[seed]

    return factory


@pytest.fixture()
def affine_setup():
    """Affine network with an integer-stride step list and matching schedule."""
    net = AffineNetwork()
    sched = make_schedule(1000)
    step_list = tuple(range(980, 0, -20))  # 49 steps, stride 20, ends at 20
    return net, sched, step_list
