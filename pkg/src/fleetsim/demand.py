"""Next-30-minute demand heat map prediction.

A three-layer convolutional network (16@5x5, 32@3x3, 1@1x1, all
rectified) maps the last two observed demand heat maps plus four
constant clock planes to a same-sized prediction.  Same padding keeps a
1:1 correspondence between output pixels and grid cells.  Cells with no
pickup in either input heat map are masked to zero at prediction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import neural
from .clock import Clock, periodic_features

INPUT_PLANES = 6

DEMAND_SPEC = (
    neural.Conv2D(INPUT_PLANES, 16, 5, 5, "relu", "same"),
    neural.Conv2D(16, 32, 3, 3, "relu", "same"),
    neural.Conv2D(32, 1, 1, 1, "relu", "same"),
)


def build_demand_input(heat_prev1: np.ndarray, heat_prev2: np.ndarray,
                       clock: Clock) -> np.ndarray:
    """Stack (heat t-1, heat t-2, sin/cos dow, sin/cos hour) as 6 planes.

    Row-major plane stack: shape (h, w, 6).
    """
    h1 = np.asarray(heat_prev1, dtype=np.float64)
    h2 = np.asarray(heat_prev2, dtype=np.float64)
    if h1.shape != h2.shape or h1.ndim != 2:
        raise ValueError(f"heat maps must share a 2-D shape, got {h1.shape} vs {h2.shape}")
    sd, cd, sh, ch = periodic_features(clock)
    planes = np.empty(h1.shape + (INPUT_PLANES,))
    planes[..., 0] = h1
    planes[..., 1] = h2
    planes[..., 2] = sd
    planes[..., 3] = cd
    planes[..., 4] = sh
    planes[..., 5] = ch
    return planes


@dataclass
class DemandModel:
    params: list[np.ndarray]

    def predict(self, demand_input: np.ndarray) -> np.ndarray:
        """Masked heat map: cells dark in both input heats predict exactly zero."""
        raw = neural.forward(DEMAND_SPEC, self.params, demand_input)[..., 0]
        mask = (demand_input[..., 0] > 0) | (demand_input[..., 1] > 0)
        return np.where(mask, raw, 0.0)

    def predict_raw(self, demand_input: np.ndarray) -> np.ndarray:
        return neural.forward(DEMAND_SPEC, self.params, demand_input)[..., 0]

    def save(self, path) -> None:
        neural.save_model(path, DEMAND_SPEC, self.params)

    @classmethod
    def load(cls, path) -> "DemandModel":
        spec, params, _, _ = neural.load_model(path)
        if spec != DEMAND_SPEC:
            raise ValueError("checkpoint is not a demand model")
        return cls(params)


def _samples(slots: np.ndarray, clocks: list[Clock]):
    inputs = [build_demand_input(slots[i - 1], slots[i - 2], clocks[i])
              for i in range(2, slots.shape[0])]
    targets = [slots[i] for i in range(2, slots.shape[0])]
    return np.stack(inputs), np.stack(targets)


def train_demand(slots: np.ndarray, clocks: list[Clock], seed: int,
                 epochs: int = 150, batch_size: int = 8, lr: float = 5e-3,
                 val_fraction: float = 0.3) -> tuple["DemandModel", float, float]:
    """Fit on a chronological split: first 70% of timeslots train, last 30% validate.

    RMSE is reported per cell over all cells of the masked prediction,
    which is what policy consumers observe.
    """
    slots = np.asarray(slots, dtype=np.float64)
    if slots.ndim != 3 or slots.shape[0] < 4:
        raise ValueError(f"need a (slots, h, w) series with at least 4 slots, got {slots.shape}")
    if len(clocks) != slots.shape[0]:
        raise ValueError("one clock per slot required")

    inputs, targets = _samples(slots, clocks)
    n = inputs.shape[0]
    n_train = max(1, int(round(n * (1.0 - val_fraction))))
    xtr, ytr = inputs[:n_train], targets[:n_train]
    xva, yva = inputs[n_train:], targets[n_train:]

    rng = np.random.default_rng(seed)
    params = neural.init_params(DEMAND_SPEC, rng)
    # start the rectified output layer alive: zero weights, positive bias;
    # dark cells then settle onto the rectifier's zero from above instead
    # of the whole map dying at initialization
    params[-2] = np.zeros_like(params[-2])
    params[-1] = np.ones_like(params[-1])
    opt = neural.RmsProp(lr=lr)
    for _ in range(epochs):
        perm = rng.permutation(n_train)
        for start in range(0, n_train, batch_size):
            idx = perm[start:start + batch_size]
            xb = xtr[idx]
            yb = ytr[idx][..., None]
            out, caches = neural.forward_cached(DEMAND_SPEC, params, xb)
            # only mask-lit cells reach consumers, so only they are trained;
            # a loss over the mostly-zero dark cells kills the rectified
            # output layer outright
            lit = ((xb[..., 0] > 0) | (xb[..., 1] > 0))[..., None]
            n_lit = max(1, int(lit.sum()))
            d_out = np.where(lit, 2.0 * (out - yb) / n_lit, 0.0)
            grads = neural.backward_from_grad(DEMAND_SPEC, params, caches, d_out)
            opt.step(params, grads)

    model = DemandModel(params)
    return model, _masked_rmse(model, xtr, ytr), _masked_rmse(model, xva, yva)


def _masked_rmse(model: DemandModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    if inputs.shape[0] == 0:
        return float("nan")
    errs = []
    for x, y in zip(inputs, targets):
        errs.append((model.predict(x) - y) ** 2)
    return float(np.sqrt(np.mean(errs)))


class HistoricalAverageDemand:
    """Per-cell mean demand by (day-of-week, hour) bucket.

    Always-available fallback predictor used for cold starts and as the
    baseline the trained network must beat.
    """

    def __init__(self, shape: tuple[int, int]):
        self.shape = tuple(shape)
        self._sums = np.zeros((7, 24) + self.shape)
        self._counts = np.zeros((7, 24))
        self._global = np.zeros(self.shape)
        self._n = 0

    def fit(self, slots: np.ndarray, clocks: list[Clock]) -> "HistoricalAverageDemand":
        for heat, clock in zip(slots, clocks):
            self._sums[clock.dow_index, clock.hour_index] += heat
            self._counts[clock.dow_index, clock.hour_index] += 1
            self._global += heat
            self._n += 1
        return self

    def predict(self, clock: Clock) -> np.ndarray:
        d, h = clock.dow_index, clock.hour_index
        if self._counts[d, h] > 0:
            return self._sums[d, h] / self._counts[d, h]
        if self._n:
            return self._global / self._n
        return np.zeros(self.shape)

    def save(self, path) -> None:
        np.savez(path, sums=self._sums, counts=self._counts,
                 global_sum=self._global, n=self._n)

    @classmethod
    def load(cls, path) -> "HistoricalAverageDemand":
        data = np.load(path)
        out = cls(tuple(data["sums"].shape[2:]))
        out._sums = data["sums"]
        out._counts = data["counts"]
        out._global = data["global_sum"]
        out._n = int(data["n"])
        return out
