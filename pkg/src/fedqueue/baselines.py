"""Comparison orchestrators run under identical queue and compute conditions.

* fedavg      -- synchronous rounds with fixed per-client local work; each
                 round blocks for all K updates, so its wall length is
                 max_k(queue wait + compute).
* fedasync    -- every arrival is applied immediately by interpolating the
                 server model toward the client's returned model with a
                 staleness-attenuated mixing weight, then the client is
                 re-dispatched.
* fedbuff     -- arrivals accumulate until the buffer holds K_buf updates,
                 then the buffer is aggregated with staleness weights.
* fedcompass  -- static throughput profiling: per-client step counts are
                 chosen so predicted finish times align within a stretch
                 factor of the fastest client's full-budget run; queue delay
                 is not modeled in the prediction.

Staleness for the asynchronous pair is measured in server model versions
between dispatch and application.  All methods draw the same per-(client,
submission-index) delay substreams as the queue-aware protocol.
"""
from __future__ import annotations

import math

import numpy as np

from . import metrics, protocol
from .engine import Simulation, _client_weights, _TIME_EPS

__all__ = ["ORCHESTRATORS", "staleness_factor", "BufferPolicy",
            "compass_assignments", "run_fedavg", "run_fedasync", "run_fedbuff",
            "run_fedcompass"]


def staleness_factor(fn: str, kwargs: dict, tau: int) -> float:
    """Server mixing attenuation s(tau) for the async family."""
    if tau < 0:
        raise ValueError("staleness must be >= 0")
    if fn == "constant":
        return 1.0
    if fn == "polynomial":
        a = float(kwargs.get("a", 1.0))
        return (1.0 + tau) ** (-a)
    if fn == "hinge":
        a = float(kwargs.get("a", 10.0))
        b = float(kwargs.get("b", 4.0))
        return 1.0 if tau <= b else 1.0 / (a * (tau - b) + 1.0)
    raise ValueError(f"unknown staleness_fn: {fn!r}")


class BufferPolicy:
    """Size-triggered aggregation buffer: flushes every `size` updates."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("buffer size must be >= 1")
        self.size = size
        self.pending = []

    def add(self, item) -> list | None:
        self.pending.append(item)
        if len(self.pending) >= self.size:
            flushed, self.pending = self.pending, []
            return flushed
        return None


def compass_assignments(speeds: np.ndarray, min_steps: int, max_steps: int,
                        latest_time_factor: float) -> np.ndarray:
    """Steps per client so predicted finishes align on a common duration.

    The window is anchored at the fastest client's full budget, stretched by
    latest_time_factor; assignments are clipped to [min_steps, max_steps].
    """
    speeds = np.asarray(speeds, dtype=float)
    duration = latest_time_factor * max_steps / float(speeds.max())
    steps = np.floor(speeds * duration).astype(int)
    return np.clip(steps, min_steps, max_steps)


class _BaselineBase:
    """Shared bookkeeping: evals, per-aggregation round rows, arrival records."""

    def __init__(self, sim: Simulation):
        self.sim = sim
        self.cfg = sim.cfg
        self.w = sim.objective.init_point()
        self.weights = _client_weights(sim.cfg, sim.objective)
        self.agg_index = 0

    def start(self) -> None:
        self.sim.evaluate(self.w)
        self.initial_dispatch()

    def on_round_boundary(self, boundary: int) -> None:  # no fixed cadence
        pass

    def finish(self) -> None:
        self.sim.log.final_model = self.w.copy()

    def _can_dispatch(self) -> bool:
        return self.sim.now < self.sim.horizon - _TIME_EPS

    def _record_aggregation(self, contributions, taus) -> None:
        """One round row + arrival records for the updates just applied."""
        sim = self.sim
        nan = float("nan")
        k_range = range(sim.num_clients)
        cols = {k: {} for k in k_range}
        for msg, tau in zip(contributions, taus):
            sim.log.arrivals.append(metrics.ArrivalRecord(
                client=msg.client, submit_round=msg.submit_round,
                submit_time=msg.submit_time, q=msg.observed_q,
                q_hat=msg.q_hat_used,
                compute_seconds=msg.arrival - msg.submit_time - msg.observed_q,
                arrival=msg.arrival, agg_round=self.agg_index, tau=tau,
                steps_done=msg.steps_done))
            cols[msg.client] = {"q": msg.observed_q, "steps_done": msg.steps_done}
        loss, acc = sim.evaluate(self.w)
        sim.log.event(sim.now, "aggregate", round=self.agg_index,
                      clients=[m.client for m in contributions], taus=list(taus))
        sim.log.rounds.append(metrics.RoundRecord(
            round=self.agg_index, time=sim.now, loss=loss, accuracy=acc,
            admitted=len(contributions), deferred=sum(1 for t in taus if t >= 1),
            mean_tau=float(np.mean(taus)) if len(taus) else 0.0,
            max_tau=int(max(taus)) if len(taus) else 0,
            q=[cols[k].get("q", nan) for k in k_range],
            q_hat=[nan] * sim.num_clients,
            steps_budget=[nan] * sim.num_clients,
            eta=[nan] * sim.num_clients,
            steps_done=[cols[k].get("steps_done", nan) for k in k_range]))
        self.agg_index += 1


class FedAvgOrchestrator(_BaselineBase):
    name = "fedavg"

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.collected = {}

    def initial_dispatch(self) -> None:
        self._dispatch_all()

    def _dispatch_all(self) -> None:
        steps = self.cfg.fedavg.num_local_steps
        for k in range(self.sim.num_clients):
            self.sim.submit_job(k, self.w, self.agg_index,
                                self.cfg.fedqueue.lr_base, int(steps[k]),
                                time_budget=math.inf)

    def on_arrival(self, msg: protocol.ClientUpdate) -> None:
        self.collected[msg.client] = msg
        if len(self.collected) < self.sim.num_clients:
            return
        batch = [self.collected[k] for k in sorted(self.collected)]
        self.collected = {}
        entries = [(float(self.weights[m.client]), 0, m.delta) for m in batch]
        self.w = protocol.aggregate(self.w, entries, protocol.StalenessDecay.flat())
        self.sim.version += 1
        self._record_aggregation(batch, [0] * len(batch))
        if self._can_dispatch():
            self._dispatch_all()


class FedAsyncOrchestrator(_BaselineBase):
    """Per-arrival interpolation toward the client's returned model:

        w <- (1 - a) w + a (w_dispatched_to_k + delta_k),  a = alpha * s(tau).

    A stale arrival therefore also drags the server part-way back toward the
    model the straggler started from, which is what destabilizes fully
    asynchronous aggregation under queue spikes.
    """

    name = "fedasync"

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.dispatched_from = {}     # client -> model snapshot it trains on

    def initial_dispatch(self) -> None:
        for k in range(self.sim.num_clients):
            self._dispatch(k)

    def _dispatch(self, k: int) -> None:
        self.dispatched_from[k] = self.w.copy()
        self.sim.submit_job(k, self.w, self.agg_index,
                            self.cfg.fedqueue.lr_base,
                            self.cfg.fedasync.num_local_steps,
                            time_budget=math.inf)

    def on_arrival(self, msg: protocol.ClientUpdate) -> None:
        az = self.cfg.fedasync
        tau = self.sim.version - msg.version
        s = staleness_factor(az.staleness_fn, az.staleness_fn_kwargs, tau)
        a = az.alpha * s
        w_client = self.dispatched_from[msg.client] + msg.delta
        self.w = (1.0 - a) * self.w + a * w_client
        self.sim.version += 1
        self._record_aggregation([msg], [tau])
        if self._can_dispatch():
            self._dispatch(msg.client)


class FedBuffOrchestrator(_BaselineBase):
    name = "fedbuff"

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.buffer = BufferPolicy(sim.cfg.fedbuff.k)

    def initial_dispatch(self) -> None:
        for k in range(self.sim.num_clients):
            self._dispatch(k)

    def _dispatch(self, k: int) -> None:
        self.sim.submit_job(k, self.w, self.agg_index,
                            self.cfg.fedqueue.lr_base,
                            self.cfg.fedasync.num_local_steps,
                            time_budget=math.inf)

    def on_arrival(self, msg: protocol.ClientUpdate) -> None:
        flushed = self.buffer.add(msg)
        if flushed is not None:
            az = self.cfg.fedasync
            taus = [self.sim.version - m.version for m in flushed]
            mixed = np.zeros_like(self.w)
            for m, tau in zip(flushed, taus):
                s = staleness_factor(az.staleness_fn, az.staleness_fn_kwargs, tau)
                mixed += s * m.delta
            self.w = self.w + az.alpha * mixed / len(flushed)
            self.sim.version += 1
            self._record_aggregation(flushed, taus)
        if self._can_dispatch():
            self._dispatch(msg.client)


class FedCompassOrchestrator(_BaselineBase):
    """Throughput-profiling cohort scheduler (no queue-delay modeling)."""

    name = "fedcompass"

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        # profiled speeds in wall steps/second; refined by momentum EWMA
        self.speeds = np.array([sim.effective_rate(k)
                                for k in range(sim.num_clients)])
        self.collected = {}

    def initial_dispatch(self) -> None:
        self._dispatch_cohort()

    def _dispatch_cohort(self) -> None:
        cp = self.cfg.compass
        steps = compass_assignments(self.speeds, cp.min_local_steps,
                                    cp.max_local_steps, cp.latest_time_factor)
        for k in range(self.sim.num_clients):
            self.sim.submit_job(k, self.w, self.agg_index,
                                self.cfg.fedqueue.lr_base, int(steps[k]),
                                time_budget=math.inf)

    def on_arrival(self, msg: protocol.ClientUpdate) -> None:
        elapsed = msg.arrival - msg.submit_time - msg.observed_q
        if msg.steps_done > 0 and elapsed > 0:
            m = self.cfg.compass.speed_momentum
            self.speeds[msg.client] = (m * self.speeds[msg.client]
                                       + (1.0 - m) * msg.steps_done / elapsed)
        self.collected[msg.client] = msg
        if len(self.collected) < self.sim.num_clients:
            return
        batch = [self.collected[k] for k in sorted(self.collected)]
        self.collected = {}
        entries = [(float(self.weights[m.client]), 0, m.delta) for m in batch]
        self.w = protocol.aggregate(self.w, entries, protocol.StalenessDecay.flat())
        self.sim.version += 1
        self._record_aggregation(batch, [0] * len(batch))
        if self._can_dispatch():
            self._dispatch_cohort()


ORCHESTRATORS = {
    "fedavg": FedAvgOrchestrator,
    "fedasync": FedAsyncOrchestrator,
    "fedbuff": FedBuffOrchestrator,
    "fedcompass": FedCompassOrchestrator,
}


def _run_as(cfg, algo: str):
    from .engine import run_experiment
    run_cfg = cfg.copy()
    run_cfg.protocol.algo = algo
    return run_experiment(run_cfg)


def run_fedavg(cfg):
    return _run_as(cfg, "fedavg")


def run_fedasync(cfg):
    return _run_as(cfg, "fedasync")


def run_fedbuff(cfg):
    return _run_as(cfg, "fedbuff")


def run_fedcompass(cfg):
    return _run_as(cfg, "fedcompass")
