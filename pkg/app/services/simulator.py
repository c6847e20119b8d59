"""
Discrete-event simulation of the observable M/G/1 queue with reneging.

The population plays a fixed threshold profile: arrivals finding n_max
balk, a type II waiter who found n leaves S_n after arriving, and after a
completion a waiter with i ahead leaves T_i after that completion. Whoever
abandons takes everyone behind along (cascade). Statistics are collected
at arrival instants after the warmup.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate

from app.core import config
from app.models.simulation import Estimate, Histogram, SimConfig, SimEstimate, TraceRecord
from app.models.state import CustomerType

logger = logging.getLogger(__name__)

# Ties at one instant: completion, then abandonment, then arrival
COMPLETION, ABANDONMENT, ARRIVAL = 0, 1, 2
N_BATCHES = 20
LOW_COUNT = 1000


@dataclass(eq=False)
class Customer:
    cid: int
    arrival_time: float
    found: int
    recorded: bool
    tagged: bool = False
    kind: CustomerType = CustomerType.TYPE_II
    type_switch_time: float | None = None
    deadline: float = math.inf
    deadline_label: str = ""
    version: int = 0


@dataclass
class SimTrace:
    """Raw post-warmup observations of one run."""
    config: SimConfig
    arrival_n: np.ndarray
    arrival_age: np.ndarray
    y_n: np.ndarray
    y_age: np.ndarray
    y_wait: np.ndarray
    payoff_found: np.ndarray
    payoff_tagged: np.ndarray
    payoff_value: np.ndarray
    marginal: dict[str, list[float]] = field(default_factory=dict)
    event_counts: dict[str, int] = field(default_factory=dict)
    end_time: float = 0.0


class _TraceWriter:
    def __init__(self, path: str | None, cap: int):
        self.handle = open(path, "w") if path else None
        self.cap = cap
        self.lines = 0

    def write(self, now: float, event: str, queue: list[Customer]):
        if self.handle is None or self.lines >= self.cap:
            return
        snapshot = [f"{c.cid}:{'I' if c.kind == CustomerType.TYPE_I else 'II'}" for c in queue]
        self.handle.write(TraceRecord(time=now, event=event, queue=snapshot).model_dump_json() + "\n")
        self.lines += 1

    def close(self):
        if self.handle is not None:
            self.handle.close()


def simulate(sim: SimConfig) -> SimTrace:
    """Run the event loop for `horizon_events` events and return the raw observations."""
    params, model, profile = sim.params, sim.model, sim.profile
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(sim.seed)))
    deviation = sim.tagged_deviation
    mean_service = model.mean

    events: list[tuple] = []
    seq = 0

    def push(time: float, priority: int, payload=None):
        nonlocal seq
        heapq.heappush(events, (time, priority, seq, payload))
        seq += 1

    queue: list[Customer] = []
    service_start = service_end = 0.0
    next_cid = 0
    pending_y: tuple[Customer, float] | None = None

    arrival_n: list[int] = []
    arrival_age: list[float] = []
    y_n: list[int] = []
    y_age: list[float] = []
    y_wait: list[float] = []
    payoff_found: list[int] = []
    payoff_tagged: list[bool] = []
    payoff_value: list[float] = []
    marginal: dict[str, list[float]] = {}
    counts = {"arrivals": 0, "balks": 0, "services": 0, "abandon_own": 0, "abandon_cascade": 0}
    writer = _TraceWriter(sim.trace_path, config.TRACE_CAP)

    def threshold(kind: str, index: int, customer: Customer) -> float:
        if deviation is not None and customer.tagged and deviation.kind == kind and deviation.index == index:
            return deviation.value
        return profile.s(index) if kind == "S" else profile.t(index)

    def settle(customer: Customer, value: float):
        if customer.recorded:
            payoff_found.append(customer.found)
            payoff_tagged.append(customer.tagged)
            payoff_value.append(value)

    def set_deadline(customer: Customer, at: float, label: str):
        customer.version += 1
        customer.deadline = at
        customer.deadline_label = label
        if math.isfinite(at):
            push(at, ABANDONMENT, (customer, customer.version))

    def start_service(now: float):
        nonlocal service_start, service_end
        head = queue[0]
        head.version += 1
        head.deadline = math.inf
        service_start = now
        service_end = now + float(model.rvs(rng))
        counts["services"] += 1
        settle(head, params.V - params.C * (now - head.arrival_time))
        push(service_end, COMPLETION)

    push(float(rng.exponential(1.0 / params.lam)), ARRIVAL)
    now = 0.0
    for step in range(sim.horizon_events):
        now, priority, _, payload = heapq.heappop(events)
        recording = step >= sim.warmup_events

        if priority == ARRIVAL:
            n = len(queue)
            counts["arrivals"] += 1
            if recording:
                arrival_n.append(n)
                arrival_age.append(now - service_start if n else math.nan)
            if pending_y is not None:
                waiting, age = pending_y
                if waiting in queue and waiting.kind == CustomerType.TYPE_II and queue.index(waiting) > 0:
                    if waiting.recorded:
                        y_n.append(waiting.found)
                        y_age.append(age)
                        y_wait.append(now - waiting.arrival_time)
                pending_y = None
            tagged = deviation is not None and rng.random() < sim.tag_rate
            customer = Customer(cid=next_cid, arrival_time=now, found=n, recorded=recording, tagged=tagged)
            next_cid += 1
            if n >= profile.n_max:
                counts["balks"] += 1
                settle(customer, 0.0)
            else:
                queue.append(customer)
                if n == 0:
                    start_service(now)
                else:
                    set_deadline(customer, now + threshold("S", n, customer), f"S{n}")
                    pending_y = (customer, now - service_start)
            push(now + float(rng.exponential(1.0 / params.lam)), ARRIVAL)
            writer.write(now, "arrival", queue)

        elif priority == COMPLETION:
            queue.pop(0)
            for i, waiting in enumerate(queue[1:], start=1):
                waiting.kind = CustomerType.TYPE_I
                if waiting.type_switch_time is None:
                    waiting.type_switch_time = now
                set_deadline(waiting, now + threshold("T", i, waiting), f"T{i}")
            if queue:
                start_service(now)
            writer.write(now, "completion", queue)

        else:
            leaver, version = payload
            if version != leaver.version or leaver not in queue:
                continue
            idx = queue.index(leaver)
            if recording and not leaver.tagged:
                residual = service_end - now
                value = params.V - params.C * (residual + (idx - 1) * mean_service)
                marginal.setdefault(leaver.deadline_label, []).append(value)
            gone = queue[idx:]
            del queue[idx:]
            for j, customer in enumerate(gone):
                customer.version += 1
                counts["abandon_own" if j == 0 else "abandon_cascade"] += 1
                settle(customer, -params.C * (now - customer.arrival_time))
            writer.write(now, "abandonment", queue)

    writer.close()
    logger.info(
        f"Simulated {sim.horizon_events} events to t={now:.4g} (seed={sim.seed}): "
        f"{counts['arrivals']} arrivals, {counts['balks']} balks, {counts['services']} services, "
        f"{counts['abandon_own']} own / {counts['abandon_cascade']} cascade abandonments"
    )
    return SimTrace(
        config=sim,
        arrival_n=np.asarray(arrival_n, dtype=int),
        arrival_age=np.asarray(arrival_age, dtype=float),
        y_n=np.asarray(y_n, dtype=int),
        y_age=np.asarray(y_age, dtype=float),
        y_wait=np.asarray(y_wait, dtype=float),
        payoff_found=np.asarray(payoff_found, dtype=int),
        payoff_tagged=np.asarray(payoff_tagged, dtype=bool),
        payoff_value=np.asarray(payoff_value, dtype=float),
        marginal=marginal,
        event_counts=counts,
        end_time=now,
    )


def batch_estimate(values: np.ndarray, n_batches: int = N_BATCHES) -> Estimate:
    """Mean with a batch-means standard error; plain SE when there are too few samples."""
    values = np.asarray(values, dtype=float)
    count = len(values)
    if count == 0:
        return Estimate(mean=math.nan, se=math.nan, count=0)
    mean = float(values.mean())
    if count < 2 * n_batches:
        se = float(values.std(ddof=1) / math.sqrt(count)) if count > 1 else math.nan
        return Estimate(mean=mean, se=se, count=count)
    batches = np.array([b.mean() for b in np.array_split(values, n_batches)])
    return Estimate(mean=mean, se=float(batches.std(ddof=1) / math.sqrt(n_batches)), count=count)


def _age_edges(trace: SimTrace) -> np.ndarray:
    sim = trace.config
    ages = trace.arrival_age[np.isfinite(trace.arrival_age)]
    hi = sim.age_range or (float(np.quantile(ages, 0.999)) if len(ages) else 1.0)
    return np.linspace(0.0, max(hi, 1e-9), sim.age_bins + 1)


def _histogram(samples: np.ndarray, edges: np.ndarray, **extra) -> Histogram:
    count = len(samples)
    widths = np.diff(edges)
    if count == 0:
        return Histogram(edges=edges.tolist(), density=[0.0] * len(widths), count=0, low_count=True, **extra)
    hist, _ = np.histogram(samples, bins=edges)
    return Histogram(
        edges=edges.tolist(),
        density=(hist / (count * widths)).tolist(),
        count=count,
        low_count=count < LOW_COUNT,
        **extra,
    )


def estimate_age_given_n(trace: SimTrace, n: int, edges: np.ndarray | None = None) -> Histogram:
    """
    Service age seen by arrivals that found n present, normalized over all of them.

    n = 0 has no service age: the histogram is empty.
    """
    edges = _age_edges(trace) if edges is None else np.asarray(edges, dtype=float)
    if n == 0:
        return _histogram(np.array([]), edges)
    samples = trace.arrival_age[trace.arrival_n == n]
    hist = _histogram(samples, edges)
    if hist.low_count:
        logger.warning(f"Only {hist.count} arrivals found N={n}; age histogram is noisy")
    return hist


def estimate_y_given_age(trace: SimTrace, n: int) -> dict[str, Histogram]:
    """Wait until the next arrival, for waiters who found n, per band of arrival age."""
    sim = trace.config
    mask = trace.y_n == n
    ages, waits = trace.y_age[mask], trace.y_wait[mask]
    age_edges = np.linspace(0.0, _age_edges(trace)[-1], sim.y_age_bins + 1)
    limit = sim.profile.s(n)
    y_hi = limit if math.isfinite(limit) else (float(waits.max()) if len(waits) else 1.0)
    y_edges = np.linspace(0.0, max(y_hi, 1e-9), sim.age_bins + 1)
    out = {}
    for i, (lo, hi) in enumerate(zip(age_edges[:-1], age_edges[1:])):
        band = (ages >= lo) & (ages < hi)
        out[f"n{n}_bin{i}"] = _histogram(waits[band], y_edges, age_lo=float(lo), age_hi=float(hi))
    return out


def _payoff_class(trace: SimTrace, coordinate: str) -> np.ndarray:
    """Customers whose payoff a deviation in `coordinate` can affect."""
    kind, index = coordinate[0], int(coordinate[1:])
    if kind == "S":
        return trace.payoff_found == index
    return trace.payoff_found >= index + 1


def summarize(trace: SimTrace) -> SimEstimate:
    sim = trace.config
    n_max = sim.profile.n_max
    pi_hat = [batch_estimate((trace.arrival_n == n).astype(float)) for n in range(n_max + 1)]
    age_histograms = {n: estimate_age_given_n(trace, n) for n in range(1, n_max + 1)}
    y_histograms: dict[str, Histogram] = {}
    for n in range(1, n_max):
        y_histograms.update(estimate_y_given_age(trace, n))
    utility = {label: batch_estimate(np.asarray(values)) for label, values in sorted(trace.marginal.items())}

    tagged = baseline = None
    if sim.tagged_deviation is not None:
        in_class = _payoff_class(trace, sim.tagged_deviation.coordinate)
        tagged = batch_estimate(trace.payoff_value[in_class & trace.payoff_tagged])
        baseline = batch_estimate(trace.payoff_value[in_class & ~trace.payoff_tagged])

    return SimEstimate(
        pi_hat=pi_hat,
        age_histograms=age_histograms,
        y_histograms=y_histograms,
        utility_at_threshold=utility,
        tagged_payoff=tagged,
        baseline_payoff=baseline,
        event_counts=dict(trace.event_counts),
        replications=1,
        seeds=[sim.seed],
    )


def run(sim: SimConfig) -> SimEstimate:
    return summarize(simulate(sim))


def deviation_payoff(sim: SimConfig) -> tuple[Estimate, Estimate]:
    """
    Payoff of tagged deviators against conforming customers of the same class.

    Returns:
        (deviator estimate, conformer estimate)
    """
    if sim.tagged_deviation is None:
        raise ValueError("deviation_payoff needs a tagged deviation")
    estimate = run(sim)
    return estimate.tagged_payoff, estimate.baseline_payoff


def _pool(estimates: list[Estimate]) -> Estimate:
    live = [e for e in estimates if e.count > 0]
    if not live:
        return Estimate(mean=math.nan, se=math.nan, count=0)
    means = np.array([e.mean for e in live])
    count = sum(e.count for e in live)
    mean = float(np.average(means, weights=[e.count for e in live]))
    if len(live) > 1:
        se = float(means.std(ddof=1) / math.sqrt(len(live)))
    else:
        se = live[0].se
    return Estimate(mean=mean, se=se, count=count)


def _pool_histograms(hists: list[Histogram]) -> Histogram:
    total = sum(h.count for h in hists)
    if total == 0:
        return hists[0]
    if any(h.edges != hists[0].edges for h in hists):
        logger.warning("Replications binned differently; keeping only those matching the first")
        hists = [h for h in hists if h.edges == hists[0].edges]
        total = sum(h.count for h in hists)
    density = np.sum([np.asarray(h.density) * h.count for h in hists], axis=0) / total
    first = hists[0]
    return Histogram(
        edges=first.edges, density=density.tolist(), count=total,
        low_count=total < LOW_COUNT, age_lo=first.age_lo, age_hi=first.age_hi,
    )


def merge_estimates(estimates: list[SimEstimate]) -> SimEstimate:
    """
    Combine independent replications.

    Histograms are pooled by count (they must share edges, i.e. a fixed
    age_range); standard errors come from the spread across replications.
    """
    if not estimates:
        raise ValueError("nothing to merge")
    if len(estimates) == 1:
        return estimates[0]
    n_states = min(len(e.pi_hat) for e in estimates)
    age_keys = set.intersection(*(set(e.age_histograms) for e in estimates))
    y_keys = set.intersection(*(set(e.y_histograms) for e in estimates))
    labels = set.union(*(set(e.utility_at_threshold) for e in estimates))
    counts: dict[str, int] = {}
    for e in estimates:
        for key, value in e.event_counts.items():
            counts[key] = counts.get(key, 0) + value
    tagged = [e.tagged_payoff for e in estimates if e.tagged_payoff is not None]
    baseline = [e.baseline_payoff for e in estimates if e.baseline_payoff is not None]
    return SimEstimate(
        pi_hat=[_pool([e.pi_hat[n] for e in estimates]) for n in range(n_states)],
        age_histograms={k: _pool_histograms([e.age_histograms[k] for e in estimates]) for k in sorted(age_keys)},
        y_histograms={k: _pool_histograms([e.y_histograms[k] for e in estimates]) for k in sorted(y_keys)},
        utility_at_threshold={
            k: _pool([e.utility_at_threshold[k] for e in estimates if k in e.utility_at_threshold])
            for k in sorted(labels)
        },
        tagged_payoff=_pool(tagged) if tagged else None,
        baseline_payoff=_pool(baseline) if baseline else None,
        event_counts=counts,
        replications=sum(e.replications for e in estimates),
        seeds=[s for e in estimates for s in e.seeds],
    )


def replicate(sim: SimConfig, replications: int) -> SimEstimate:
    """Independent runs seeded from one SeedSequence, then merged."""
    if replications < 1:
        raise ValueError("need at least one replication")
    children = [int(s) for s in np.random.SeedSequence(sim.seed).generate_state(replications, dtype=np.uint32)]
    first = simulate(sim.model_copy(update={"seed": children[0]}))
    runs = [summarize(first)]
    # later replications reuse the first run's age range so histograms share edges
    fixed = sim.model_copy(update={"age_range": float(_age_edges(first)[-1])})
    runs += [run(fixed.model_copy(update={"seed": s})) for s in children[1:]]
    return merge_estimates(runs)


def histogram_l1(hist: Histogram, points: np.ndarray, density: np.ndarray) -> float:
    """
    L1 distance between an empirical histogram and an analytic density.

    The analytic side is integrated over each bin; mass outside the
    histogram range counts once on each side.
    """
    edges = np.asarray(hist.edges, dtype=float)
    cdf = sp_integrate.cumulative_trapezoid(density, points, initial=0.0)
    analytic = np.diff(np.interp(edges, points, cdf))
    empirical = np.asarray(hist.density) * np.diff(edges)
    outside = abs((1.0 - empirical.sum()) - (cdf[-1] - analytic.sum()))
    return float(np.abs(empirical - analytic).sum() + outside)
