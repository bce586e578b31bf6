"""Demand prediction: convolutional forecaster vs historical averages."""

import numpy as np

from fleetsim.clock import Clock
from fleetsim.demand import (
    HistoricalAverageDemand, build_demand_input, train_demand,
)

rng = np.random.default_rng(5)
h = w = 10
days = 10
rows = np.arange(h)[:, None]
cols = np.arange(w)[None, :]
base = (2.5 * np.exp(-0.5 * (((rows - 3) / 1.4) ** 2 + ((cols - 3) / 1.4) ** 2))
        + 1.8 * np.exp(-0.5 * (((rows - 7) / 1.4) ** 2 + ((cols - 6) / 1.4) ** 2)))

slots = []
clocks = []
level = 1.0
for k in range(days * 48):
    hour = (k * 0.5) % 24.0
    level = np.exp(0.85 * np.log(level) + rng.normal(0, 0.12))  # smooth swings
    lam = base * (1.0 + 0.7 * np.sin(2 * np.pi * hour / 24.0)) * level
    slots.append(rng.poisson(lam))
    clocks.append(Clock(k * 30.0))
slots = np.array(slots, dtype=float)

model, train_rmse, val_rmse = train_demand(slots, clocks, seed=11, epochs=60)
n = slots.shape[0] - 2
split = 2 + int(round(n * 0.7))
hist = HistoricalAverageDemand((h, w)).fit(slots[:split], clocks[:split])
errs = [(hist.predict(clocks[i]) - slots[i]) ** 2 for i in range(split, len(slots))]
print(f"cnn validation rmse {val_rmse:.4f} per cell "
      f"(historical-average baseline {np.sqrt(np.mean(errs)):.4f})")

planes = build_demand_input(slots[-1], slots[-2], clocks[-1])
pred = model.predict(planes)
print(f"hot cell (3,3): predicted {pred[3, 3]:.2f}, trailing actuals "
      f"{slots[-1][3, 3]:.0f} and {slots[-2][3, 3]:.0f}")
print(f"cells masked to zero: {int((pred == 0).sum())} of {h * w}")
