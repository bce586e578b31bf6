"""Per-vehicle Q-policy machinery: feature planes, action maps, replay.

Builds the two-branch network input for a vehicle, runs the value map,
and walks one double-Q training step on synthetic transitions.
"""

import numpy as np

from fleetsim import neural
from fleetsim.dqn import (
    QNetwork, ReplayBuffer, Schedules, Transition, VehicleContext,
    build_feature_planes, legal_action_mask, masked_q, select_action,
    train_step,
)

rng = np.random.default_rng(2)
shape = (10, 10)
ctx = VehicleContext(
    demand=rng.uniform(0, 3, size=shape),
    supply=rng.uniform(0, 2, size=(3,) + shape),
    idle=rng.uniform(0, 2, size=shape),
    region=(2, 7),
    sin_dow=0.0, cos_dow=1.0, sin_hour=1.0, cos_hour=0.0,
)
qin = build_feature_planes(ctx)
print(f"main branch {qin.main.shape}, aux branch {qin.aux.shape}")
print(f"legal destination cells: {int(qin.aux[..., 10].sum())} of 225")

net = QNetwork.create(rng)
qmap = masked_q(net.q_map(qin), legal_action_mask(ctx.region, shape))
greedy = select_action(qmap, epsilon=0.0, rng=rng)
print(f"greedy action cell {greedy} (offset {greedy[0]-7:+d},{greedy[1]-7:+d})")

# one double-Q training step over a replay buffer of random transitions
buf = ReplayBuffer()
for i in range(80):
    region = (int(rng.integers(0, 10)), int(rng.integers(0, 10)))
    c = VehicleContext(demand=rng.uniform(0, 3, size=shape),
                       supply=rng.uniform(0, 2, size=(3,) + shape),
                       idle=rng.uniform(0, 2, size=shape), region=region,
                       sin_dow=0.0, cos_dow=1.0, sin_hour=0.0, cos_hour=1.0)
    legal = np.argwhere(legal_action_mask(region, shape))
    action = tuple(legal[int(rng.integers(len(legal)))])
    buf.push(Transition(c, action, float(rng.uniform(-5, 15)), c,
                        int(rng.integers(0, 5))))

target = net.copy()
opt = neural.RmsProp(lr=1e-3)
loss, mean_max_q = train_step(net, target, buf, opt, gamma=0.98, rng=rng)
print(f"one minibatch: loss {loss:.3f}, mean max-Q {mean_max_q:.3f}")

sched = Schedules()
print(f"epsilon ramp: {sched.epsilon(0):.2f} -> {sched.epsilon(2500):.3f} -> "
      f"{sched.epsilon(5000):.2f}; action rate {sched.alpha(0):.2f} -> {sched.alpha(5000):.2f}")
