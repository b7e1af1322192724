"""Deterministic discrete-event loop and the queue-aware orchestrator.

The server wall clock advances through a heap of timed events: job starts,
update arrivals, and (for round-based methods) boundaries at exactly
r * T_sync.  Ties are processed arrivals-first so an update landing exactly
on a cutoff is admitted to that cutoff's round, then boundaries, in client
order.  All randomness flows through per-(client, submission) substreams, so
a given seed produces the same admission delays for every algorithm and a
rerun reproduces the log bit for bit.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import learn, metrics, protocol, queue_sim
from .config import ExperimentConfig, set_key, validate_config
from .predictor import DelayPredictor
from .streams import spawn_seed, substream

__all__ = ["Simulation", "FedQueueOrchestrator", "run_experiment", "run_sweep"]

# event ranks: arrivals strictly before round boundaries at equal times
RANK_JOB_START = 0
RANK_ARRIVAL = 1
RANK_ROUND = 2

_TIME_EPS = 1e-9


@dataclass
class SimEvent:
    time: float
    kind: str            # "job_start" | "arrival" | "round"
    payload: object      # client index, ClientUpdate, or round index


class Simulation:
    """Clock, event heap, and shared dispatch machinery for one experiment."""

    def __init__(self, cfg: ExperimentConfig, objective, queue_model,
                 profile, log: metrics.MetricsLog):
        self.cfg = cfg
        self.objective = objective
        self.queue_model = queue_model
        self.profile = profile
        self.log = log
        self.seed = cfg.protocol.seed
        self.num_clients = cfg.protocol.num_clients
        self.t_sync = cfg.fedqueue.t_sync
        self.horizon = cfg.protocol.num_rounds * cfg.fedqueue.t_sync
        self.now = 0.0
        self.version = 0                      # server model versions applied
        self._heap = []
        self._seq = 0
        self._submissions = np.zeros(self.num_clients, dtype=int)
        self.in_flight = 0

    # ---- scheduling ------------------------------------------------------
    def schedule(self, time: float, rank: int, key: int, event: SimEvent) -> None:
        if time < self.now - _TIME_EPS:
            raise RuntimeError(f"event scheduled in the past: {time} < {self.now}")
        heapq.heappush(self._heap, (time, rank, key, self._seq, event))
        self._seq += 1

    def schedule_round_boundaries(self, num_rounds: int) -> None:
        # boundary r closes round r-1; times are r * T_sync exactly, never summed
        for r in range(1, num_rounds + 1):
            self.schedule(r * self.t_sync, RANK_ROUND, r,
                          SimEvent(r * self.t_sync, "round", r))

    # ---- client jobs -----------------------------------------------------
    def effective_rate(self, k: int) -> float:
        slow = max(float(self.profile.slowdown[k]), 1e-9)
        return float(self.profile.throughput[k]) / slow

    def submit_job(self, k: int, w: np.ndarray, submit_round: int, eta: float,
                   step_budget: int, time_budget: float,
                   q_hat_used: float = float("nan")) -> protocol.ClientUpdate:
        """Broadcast + job submission: draws the admission delay, runs the
        budget-capped local update, and schedules start/arrival events."""
        j = int(self._submissions[k])
        self._submissions[k] += 1
        q = queue_sim.sample_queue_delay(self.queue_model, k,
                                         substream(self.seed, "queue", k, j))
        sgd_rng = substream(self.seed, "sgd", k, j)
        delta, steps_done, elapsed = protocol.client_local_update(
            self.objective, k, w, eta, step_budget, time_budget,
            self.profile, self.cfg.protocol.batch_size, sgd_rng)
        arrival = self.now + q + elapsed
        msg = protocol.ClientUpdate(
            client=k, submit_round=submit_round, delta=delta, observed_q=q,
            arrival=arrival, steps_done=steps_done, q_hat_used=q_hat_used,
            submit_time=self.now, version=self.version)
        self.schedule(self.now + q, RANK_JOB_START, k,
                      SimEvent(self.now + q, "job_start", k))
        self.schedule(arrival, RANK_ARRIVAL, k, SimEvent(arrival, "arrival", msg))
        self.in_flight += 1
        self.log.total_local_steps += steps_done
        self.log.dispatches.append(metrics.DispatchRecord(
            time=self.now, client=k, round=submit_round,
            steps_budget=step_budget, eta=eta))
        self.log.event(self.now, "dispatch", client=k, round=submit_round,
                       steps=step_budget, eta=eta, q_hat=q_hat_used)
        return msg

    def evaluate(self, w: np.ndarray) -> tuple[float, float | None]:
        loss, acc = self.objective.evaluate(w, "test")
        self.log.evals.append((self.now, loss, acc))
        self.log.event(self.now, "eval", loss=loss, accuracy=acc)
        return loss, acc

    # ---- main loop -------------------------------------------------------
    def run(self, orchestrator) -> None:
        orchestrator.start()
        while self._heap:
            time, rank, key, _, event = heapq.heappop(self._heap)
            if time > self.horizon + _TIME_EPS:
                break
            assert time >= self.now - _TIME_EPS
            self.now = time
            if event.kind == "job_start":
                self.log.event(time, "job_start", client=event.payload)
            elif event.kind == "arrival":
                msg = event.payload
                self.in_flight -= 1
                # causality: arrival = submit + queue wait + compute, exactly
                assert msg.arrival >= msg.submit_time - _TIME_EPS
                self.log.event(time, "arrival", client=msg.client,
                               round=msg.submit_round, q=msg.observed_q,
                               steps=msg.steps_done)
                orchestrator.on_arrival(msg)
            else:
                orchestrator.on_round_boundary(event.payload)
        orchestrator.finish()


def _client_weights(cfg: ExperimentConfig, objective) -> np.ndarray:
    if cfg.fedqueue.client_weight_mode == "data_size":
        return np.asarray(objective.weights, dtype=float)
    return np.full(cfg.protocol.num_clients, 1.0 / cfg.protocol.num_clients)


class FedQueueOrchestrator:
    """Queue-aware server: budgets from online delay predictions, deadline
    admission with buffering, staleness-weighted aggregation."""

    name = "fedqueue"

    def __init__(self, sim: Simulation):
        self.sim = sim
        cfg = sim.cfg
        self.cfg = cfg
        fq = cfg.fedqueue
        self.w = sim.objective.init_point()
        self.weights = _client_weights(cfg, sim.objective)
        if cfg.ablation.use_staleness_decay:
            self.decay = protocol.StalenessDecay(fq.staleness_mode, fq.staleness_beta)
        else:
            self.decay = protocol.StalenessDecay.flat()
        if cfg.ablation.use_ewma:
            self.predictor = DelayPredictor.ewma(sim.num_clients, fq.alpha, fq.q_init)
        else:
            static = (fq.queue_means if fq.sim_queue == "lognormal"
                      else fq.queue_fixed)
            self.predictor = DelayPredictor.static(static)
        self.delta_eff = protocol.effective_safety_buffer(fq.delta, fq.gamma)
        self.buffer: list[protocol.ClientUpdate] = []
        self.pool = set(range(sim.num_clients))
        self.round_in_progress = 0
        self.e_min_ref: int | None = None
        self._round_cols = {}     # round -> per-client dispatch/arrival columns
        self._round_rows = []     # (round, time, loss, acc, admitted, mean, max)
        self._last_eval = (float("nan"), None)

    # ---- lifecycle -------------------------------------------------------
    def start(self) -> None:
        sim, cfg = self.sim, self.cfg
        if cfg.fedqueue.warmup_steps > 0 and cfg.ablation.use_ewma:
            # pure delay probes before round 0: seed predictions, no aggregation
            for k in range(sim.num_clients):
                q = queue_sim.sample_queue_delay(
                    sim.queue_model, k, substream(sim.seed, "warmup", k))
                self.predictor.seed(k, q)
                sim.log.warmup.append((k, q))
                sim.log.total_local_steps += cfg.fedqueue.warmup_steps
                sim.log.event(0.0, "warmup_probe", client=k, q=q)
        self._last_eval = sim.evaluate(self.w)
        sim.schedule_round_boundaries(cfg.protocol.num_rounds)
        self.dispatch_round(0)

    def dispatch_round(self, r: int) -> None:
        sim, fq = self.sim, self.cfg.fedqueue
        cohort = sorted(self.pool)
        self.pool = set()
        if not cohort:
            return
        budgets = {}
        for k in cohort:
            q_hat = self.predictor.predict(k)
            budgets[k] = (q_hat, protocol.compute_budget(
                fq.t_sync, q_hat, self.delta_eff, sim.effective_rate(k), fq.e_floor))
        live = {k: b for k, (qh, b) in budgets.items() if b.steps > 0}
        if not live:
            self.pool.update(cohort)
            return
        e_min = min(b.steps for b in live.values())
        self.e_min_ref = e_min
        for k in cohort:
            q_hat, budget = budgets[k]
            if budget.steps == 0:
                self.pool.add(k)      # nothing dispatchable this round
                continue
            if self.cfg.ablation.use_inverse_lr:
                eta = protocol.scale_learning_rate(fq.lr_base, e_min, budget.steps)
            else:
                eta = fq.lr_base
            # the floor may exceed what fits in J; honor it (deployed practice)
            time_budget = max(budget.job_seconds,
                              budget.steps / sim.effective_rate(k))
            msg = sim.submit_job(k, self.w, r, eta, budget.steps, time_budget,
                                 q_hat_used=q_hat)
            self._round_col(r, k).update(
                q=msg.observed_q, q_hat=q_hat, steps_budget=budget.steps,
                eta=eta, steps_done=msg.steps_done)

    def on_arrival(self, msg: protocol.ClientUpdate) -> None:
        # delay observations carry information even when the update buffers
        self.predictor.observe(msg.client, msg.observed_q)
        self.buffer.append(msg)
        if self.cfg.fedqueue.broadcast_when == "immediate":
            self._dispatch_immediate(msg.client)

    def _dispatch_immediate(self, k: int) -> None:
        sim, fq = self.sim, self.cfg.fedqueue
        if sim.now >= sim.horizon - _TIME_EPS:
            return
        s = min(int(math.floor(sim.now / fq.t_sync + _TIME_EPS)),
                self.cfg.protocol.num_rounds - 1)
        q_hat = self.predictor.predict(k)
        budget = protocol.compute_budget(fq.t_sync, q_hat, self.delta_eff,
                                         sim.effective_rate(k), fq.e_floor)
        if budget.steps == 0:
            self.pool.add(k)
            return
        e_ref = min(self.e_min_ref or budget.steps, budget.steps)
        if self.cfg.ablation.use_inverse_lr:
            eta = protocol.scale_learning_rate(fq.lr_base, e_ref, budget.steps)
        else:
            eta = fq.lr_base
        time_budget = max(budget.job_seconds, budget.steps / sim.effective_rate(k))
        msg = sim.submit_job(k, self.w, s, eta, budget.steps, time_budget,
                             q_hat_used=q_hat)
        self._round_col(s, k).update(
            q=msg.observed_q, q_hat=q_hat, steps_budget=budget.steps,
            eta=eta, steps_done=msg.steps_done)

    def on_round_boundary(self, boundary: int) -> None:
        sim, fq = self.sim, self.cfg.fedqueue
        cutoff = boundary * fq.t_sync
        closing = boundary - 1
        if fq.admission_horizon == "horizon":
            admitted, self.buffer = protocol.partition_admissions(self.buffer, cutoff)
        else:
            admitted, self.buffer = list(self.buffer), []
        taus = []
        if admitted:
            entries = []
            for m in admitted:
                r_formula, tau_formula = protocol.assign_aggregation_round(
                    m.submit_round, m.arrival, fq.t_sync)
                tau = closing - m.submit_round
                assert tau == tau_formula and r_formula == closing, \
                    "admission disagrees with the buffering rule"
                taus.append(tau)
                entries.append((float(self.weights[m.client]), tau, m.delta))
                sim.log.arrivals.append(metrics.ArrivalRecord(
                    client=m.client, submit_round=m.submit_round,
                    submit_time=m.submit_time, q=m.observed_q,
                    q_hat=m.q_hat_used,
                    compute_seconds=m.arrival - m.submit_time - m.observed_q,
                    arrival=m.arrival, agg_round=closing, tau=tau,
                    steps_done=m.steps_done))
            self.w = protocol.aggregate(self.w, entries, self.decay)
            sim.version += 1
            self._last_eval = sim.evaluate(self.w)
            sim.log.event(cutoff, "aggregate", round=closing,
                          clients=[m.client for m in admitted], taus=taus)
            if fq.broadcast_when == "next_round":
                self.pool.update(m.client for m in admitted)
        else:
            sim.log.skipped_rounds += 1
            sim.log.event(cutoff, "skipped_round", round=closing)
        loss, acc = self._last_eval
        self._round_rows.append((closing, cutoff, loss, acc, len(admitted),
                                 float(np.mean(taus)) if taus else 0.0,
                                 max(taus) if taus else 0))
        self.round_in_progress = boundary
        if boundary < self.cfg.protocol.num_rounds:
            self.dispatch_round(boundary)

    def finish(self) -> None:
        self.sim.log.final_model = self.w.copy()
        nan = float("nan")
        k_range = range(self.sim.num_clients)
        deferred_by_round = {}
        for a in self.sim.log.arrivals:
            if a.tau >= 1:
                deferred_by_round[a.submit_round] = \
                    deferred_by_round.get(a.submit_round, 0) + 1
        for (r, t, loss, acc, n_adm, mean_tau, max_tau) in self._round_rows:
            cols = self._round_cols.get(r, {})
            self.sim.log.rounds.append(metrics.RoundRecord(
                round=r, time=t, loss=loss, accuracy=acc, admitted=n_adm,
                deferred=deferred_by_round.get(r, 0),
                mean_tau=mean_tau, max_tau=max_tau,
                q=[cols.get(k, {}).get("q", nan) for k in k_range],
                q_hat=[cols.get(k, {}).get("q_hat", nan) for k in k_range],
                steps_budget=[cols.get(k, {}).get("steps_budget", nan) for k in k_range],
                eta=[cols.get(k, {}).get("eta", nan) for k in k_range],
                steps_done=[cols.get(k, {}).get("steps_done", nan) for k in k_range]))

    def _round_col(self, r: int, k: int) -> dict:
        return self._round_cols.setdefault(r, {}).setdefault(k, {})


def _build_queue_model(cfg: ExperimentConfig) -> queue_sim.QueueModel:
    fq = cfg.fedqueue
    return queue_sim.QueueModel(
        kind=fq.sim_queue,
        fixed_delays=np.asarray(fq.queue_fixed, dtype=float),
        means=np.asarray(fq.queue_means, dtype=float),
        rho=fq.queue_rho,
        slowdown=np.asarray(fq.slowdown, dtype=float),
        mean_mode=fq.queue_mean_mode)


def _build_profile(cfg: ExperimentConfig) -> queue_sim.ComputeProfile:
    fq = cfg.fedqueue
    return queue_sim.ComputeProfile(
        throughput=np.asarray(fq.throughput, dtype=float),
        slowdown=np.asarray(fq.slowdown, dtype=float))


def run_experiment(cfg: ExperimentConfig) -> metrics.MetricsLog:
    """Warm-up plus the configured horizon under the configured orchestrator.

    Identical config and seed give a bit-identical log.  Numerical divergence
    marks the log failed instead of raising.
    """
    from .baselines import ORCHESTRATORS  # late import; baselines build on engine

    validate_config(cfg)
    algo = cfg.protocol.algo
    objective = learn.build_objective(cfg, substream(cfg.protocol.seed, "data"))
    log = metrics.MetricsLog(
        algo=algo, seed=cfg.protocol.seed, num_clients=cfg.protocol.num_clients,
        t_sync=cfg.fedqueue.t_sync,
        horizon=cfg.protocol.num_rounds * cfg.fedqueue.t_sync,
        config=cfg.flat())
    sim = Simulation(cfg, objective, _build_queue_model(cfg),
                     _build_profile(cfg), log)
    if algo == "fedqueue":
        orchestrator = FedQueueOrchestrator(sim)
    else:
        orchestrator = ORCHESTRATORS[algo](sim)
    try:
        sim.run(orchestrator)
    except FloatingPointError as exc:
        log.failed = True
        log.failure_reason = str(exc)
        orchestrator.finish()
    return log


def run_sweep(cfg: ExperimentConfig, axis: str, values, trials: int = 1,
              jobs: int = 1):
    """Grid of independent experiments over one config axis.

    Per-experiment seeds derive from (master seed, value index, trial index),
    so results do not depend on execution order and each grid point can be
    reproduced standalone by running its config directly.
    """
    from .config import resolve_axis

    resolve_axis(axis)  # fail fast on unknown keys
    master = cfg.protocol.seed
    runs = []
    for vi, value in enumerate(values):
        for ti in range(trials):
            point = cfg.copy()
            set_key(point, axis, value)
            point.protocol.seed = spawn_seed(master, vi, ti)
            runs.append((vi, value, ti, point))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(run_experiment, [p for *_, p in runs]))
    else:
        logs = [run_experiment(p) for *_, p in runs]
    return [{"value": value, "trial": ti, "seed": point.protocol.seed, "log": log}
            for (vi, value, ti, point), log in zip(runs, logs)]
