"""Slot selection and value learning from configuration-time rewards.

Each request is a one-shot decision with an immediate reward
(``-config_time_s``), so the discount factor is 0 and Q-learning reduces to
a contextual bandit over the 49 slots. Both endpoints of a request get the
same slot; selection sums the two endpoints' values, updates are applied
per endpoint from that endpoint's own feedback.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import N_SLOTS, FrequencySlot, TransceiverId, as_slot
from .errors import CorruptModel, InvalidFeedback, UnknownTransceiver


@dataclass
class ExplorationSchedule:
    epsilon0: float = 1.0
    epsilon_min: float = 0.05
    decay: float = 0.999002
    episode: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon0 <= 1:
            raise ValueError("epsilon0 must lie in (0, 1]")
        if not 0 < self.epsilon_min <= self.epsilon0:
            raise ValueError("epsilon_min must lie in (0, epsilon0]")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.episode < 0:
            raise ValueError("episode must be >= 0")

    def epsilon(self, episode: int | None = None) -> float:
        return epsilon_at(self, self.episode if episode is None else episode)


def epsilon_at(schedule: ExplorationSchedule, episode: int) -> float:
    if episode < 0:
        raise ValueError("episode must be >= 0")
    return max(schedule.epsilon_min, schedule.epsilon0 * schedule.decay ** episode)


def _key(t: TransceiverId) -> str:
    return f"{t.whitebox}/{t.port}"


def _unkey(k: str) -> TransceiverId:
    wb, _, port = k.partition("/")
    return TransceiverId(wb, port)


class QModel:
    """Common surface of the tabular and FNN value models."""

    backend: str

    def __init__(self, seed: int = 0, schedule: ExplorationSchedule | None = None):
        self.seed = seed
        self.schedule = schedule or ExplorationSchedule()
        self.rng = np.random.default_rng(seed)

    def q_values(self, transceiver: TransceiverId) -> np.ndarray:
        raise NotImplementedError

    def update(self, transceiver: TransceiverId, slot: FrequencySlot | int, config_time_s: float) -> None:
        raise NotImplementedError

    def select_slot(self, ingress: TransceiverId, egress: TransceiverId,
                    epsilon: float | None = None) -> FrequencySlot:
        return select_slot(self, ingress, egress, self.schedule.epsilon() if epsilon is None else epsilon)

    def _check_reward(self, config_time_s: float) -> float:
        if not (isinstance(config_time_s, (int, float)) and math.isfinite(config_time_s)) or config_time_s <= 0:
            raise InvalidFeedback(f"config_time_s must be a positive finite number, got {config_time_s!r}")
        return -float(config_time_s)

    # -- persistence --------------------------------------------------------
    def _header(self) -> dict:
        return {
            "backend": self.backend,
            "gamma": 0,
            "schedule": asdict(self.schedule),
            "seed": self.seed,
            "rng_state": self.rng.bit_generator.state,
        }

    def to_document(self) -> dict:
        raise NotImplementedError

    def dumps(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, indent=1) + "\n"


class TabularQ(QModel):
    backend = "tabular"

    def __init__(self, alpha: float = 0.1, seed: int = 0, schedule: ExplorationSchedule | None = None):
        super().__init__(seed, schedule)
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = alpha
        self.q: dict[TransceiverId, np.ndarray] = {}

    def q_values(self, transceiver):
        q = self.q.get(transceiver)
        return q.copy() if q is not None else np.zeros(N_SLOTS)

    def update(self, transceiver, slot, config_time_s):
        r = self._check_reward(config_time_s)
        k = as_slot(slot).index
        q = self.q.setdefault(transceiver, np.zeros(N_SLOTS))
        q[k] += self.alpha * (r - q[k])

    def to_document(self):
        doc = self._header()
        doc["alpha"] = self.alpha
        doc["q"] = {_key(t): v.tolist() for t, v in sorted(self.q.items())}
        return doc


class FnnQ(QModel):
    """One-hidden-layer network: one-hot transceiver -> 49 slot values."""

    backend = "fnn"

    def __init__(self, transceivers: Iterable[TransceiverId], hidden: int = 32,
                 step_size: float = 0.01, seed: int = 0, schedule: ExplorationSchedule | None = None):
        super().__init__(seed, schedule)
        self.transceivers = list(transceivers)
        if len(set(self.transceivers)) != len(self.transceivers) or not self.transceivers:
            raise ValueError("transceivers must be a non-empty list without duplicates")
        self.index = {t: i for i, t in enumerate(self.transceivers)}
        self.hidden = hidden
        self.step_size = step_size
        init = np.random.default_rng(seed)
        n = len(self.transceivers)
        self.w1 = init.uniform(-0.05, 0.05, (n, hidden))
        self.b1 = init.uniform(-0.05, 0.05, hidden)
        self.w2 = init.uniform(-0.05, 0.05, (hidden, N_SLOTS))
        self.b2 = init.uniform(-0.05, 0.05, N_SLOTS)

    def _row(self, transceiver) -> int:
        try:
            return self.index[transceiver]
        except KeyError:
            raise UnknownTransceiver(f"{transceiver} is not an input of this network") from None

    def _hidden(self, row: int) -> np.ndarray:
        return np.maximum(self.w1[row] + self.b1, 0.0)

    def q_values(self, transceiver):
        return self._hidden(self._row(transceiver)) @ self.w2 + self.b2

    def update(self, transceiver, slot, config_time_s):
        r = self._check_reward(config_time_s)
        k = as_slot(slot).index
        row = self._row(transceiver)
        h = self._hidden(row)
        err = float(h @ self.w2[:, k] + self.b2[k]) - r
        # gradient of 0.5 * err**2 through the taken output only
        grad_h = err * self.w2[:, k] * (h > 0)
        lr = self.step_size
        self.w2[:, k] -= lr * err * h
        self.b2[k] -= lr * err
        self.w1[row] -= lr * grad_h
        self.b1 -= lr * grad_h

    def to_document(self):
        doc = self._header()
        doc.update(
            hidden=self.hidden,
            step_size=self.step_size,
            transceivers=[_key(t) for t in self.transceivers],
            weights={"w1": self.w1.tolist(), "b1": self.b1.tolist(),
                     "w2": self.w2.tolist(), "b2": self.b2.tolist()},
        )
        return doc


def select_slot(model: QModel, ingress: TransceiverId, egress: TransceiverId,
                epsilon: float, rng: np.random.Generator | None = None) -> FrequencySlot:
    """Epsilon-greedy choice of one slot for both endpoints.

    Greedy picks argmax of the summed endpoint values; ties go to the lowest
    slot index (``np.argmax`` returns the first maximum).
    """
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    rng = model.rng if rng is None else rng
    if epsilon > 0 and rng.random() < epsilon:
        return FrequencySlot(int(rng.integers(N_SLOTS)))
    total = model.q_values(ingress) + model.q_values(egress)
    return FrequencySlot(int(np.argmax(total)))


def update(model: QModel, transceiver: TransceiverId, slot, config_time_s: float) -> QModel:
    model.update(transceiver, slot, config_time_s)
    return model


def save(model: QModel) -> str:
    return model.dumps()


def _floats(xs, shape=None) -> np.ndarray:
    arr = np.asarray(xs, dtype=float)
    if shape is not None and arr.shape != shape:
        raise CorruptModel(f"expected shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise CorruptModel("non-finite values")
    return arr


def load(document: str | bytes | dict) -> QModel:
    try:
        doc = json.loads(document) if isinstance(document, (str, bytes)) else document
        if doc.get("gamma", 0) != 0:
            raise CorruptModel("only gamma = 0 models are supported")
        schedule = ExplorationSchedule(**doc["schedule"])
        backend = doc["backend"]
        if backend == "tabular":
            model = TabularQ(alpha=doc["alpha"], seed=doc["seed"], schedule=schedule)
            model.q = {_unkey(k): _floats(v, (N_SLOTS,)) for k, v in doc["q"].items()}
        elif backend == "fnn":
            ts = [_unkey(k) for k in doc["transceivers"]]
            model = FnnQ(ts, hidden=doc["hidden"], step_size=doc["step_size"],
                         seed=doc["seed"], schedule=schedule)
            w = doc["weights"]
            model.w1 = _floats(w["w1"], model.w1.shape)
            model.b1 = _floats(w["b1"], model.b1.shape)
            model.w2 = _floats(w["w2"], model.w2.shape)
            model.b2 = _floats(w["b2"], model.b2.shape)
        else:
            raise CorruptModel(f"unknown backend {backend!r}")
        model.rng.bit_generator.state = doc["rng_state"]
    except CorruptModel:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CorruptModel(f"cannot load model document: {exc}") from exc
    return model


def make_model(backend: str = "tabular", transceivers: Sequence[TransceiverId] = (),
               seed: int = 0, schedule: ExplorationSchedule | None = None, **params) -> QModel:
    if backend == "tabular":
        return TabularQ(seed=seed, schedule=schedule, **params)
    if backend == "fnn":
        return FnnQ(transceivers, seed=seed, schedule=schedule, **params)
    raise ValueError(f"unknown backend {backend!r}")
