"""Federated orchestration: clients, the round loop, and aggregation rules.

Simulation is in-process: a round broadcasts the global state, runs every
participating client's local update (optionally on a thread pool; each client
owns its model, optimizer, and rng, so scheduling cannot change results),
aggregates in ascending client-id order, and evaluates the global model on a
held-out test set.

Client optimizer state persists across rounds and is never aggregated or
reset. Any object exposing the small model surface used here (forward,
named_parameters, zero_grad, state_dict/load_state_dict, train/eval,
bn_param_names, head_param_names) can stand in for a Network, which keeps
toy models testable.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import NumericsError, Tensor, softmax_cross_entropy
from .data import (DataError, Dataset, build_shared_pool, load_cifar10_binary,
                   mean_pairwise_ks, partition_iid, partition_label_skew,
                   synth_dataset, to_input)
from .models import Network, count_params
from .optim import AGCConfig, AdamW, LrSchedule, SGD, clip_model_grads, lr_at
from .reporting import (ExperimentReport, RoundRecord, StopWatch, evaluate,
                        rounds_to_target, tms)

__all__ = ["FLMethodConfig", "ClientState", "YogiState", "local_update",
           "train_epochs", "aggregate_fedavg", "aggregate_fedbn",
           "yogi_server_step", "run_round", "run_federated", "central_train"]

FL_METHODS = ("fedavg", "fedprox", "share", "fedyogi", "fedbn")


@dataclass(frozen=True)
class FLMethodConfig:
    """Aggregation method plus its constants (defaults follow the federated
    fine-tuning recipes this simulator mirrors)."""
    name: str
    mu: float = 5e-4              # fedprox proximal strength
    fraction: float = 0.05        # share: fraction of each client pooled
    beta1: float = 0.9            # fedyogi moments
    beta2: float = 0.99
    tau: float = 0.05             # fedyogi adaptivity
    eta_client: float = 0.01      # fedyogi client lr (overrides optimizer lr)
    eta_server: float = 1.0       # fedyogi server lr

    def validate(self) -> list[str]:
        errs = []
        if self.name not in FL_METHODS:
            errs.append(f"name must be one of {FL_METHODS}, got {self.name!r}")
        if self.mu < 0:
            errs.append("mu must be >= 0")
        if not (0.0 < self.fraction < 1.0):
            errs.append("fraction must be in (0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            errs.append("beta1/beta2 must be in [0, 1)")
        if self.tau <= 0:
            errs.append("tau must be > 0")
        if self.eta_client <= 0 or self.eta_server <= 0:
            errs.append("eta_client and eta_server must be > 0")
        return errs


class ClientState:
    """One simulated client. Optimizer state and the data-order rng persist
    across rounds; the sample count is the index-list length (shared-pool
    entries included under the share method)."""

    def __init__(self, client_id: int, indices, model, optimizer,
                 rng: np.random.Generator):
        self.id = client_id
        self.indices = np.asarray(indices, dtype=np.int64)
        self.model = model
        self.optimizer = optimizer
        self.rng = rng
        self.step_count = 0

    @property
    def n_k(self) -> int:
        return len(self.indices)


# ---------------------------------------------------------------------------
# local training
# ---------------------------------------------------------------------------

def apply_prox_grads(params, mu: float, ref: dict) -> None:
    """Add the proximal-term gradient mu * (w - w_ref) to every parameter."""
    for name, p in params.items():
        p.grad += mu * (p.data - ref[name])


def train_epochs(model, optimizer, dataset: Dataset, indices, rng, *,
                 epochs: int, batch_size: int, schedule: LrSchedule,
                 agc_cfg: AGCConfig | None = None, prox=None,
                 step_count: int = 0, dtype=np.float32) -> tuple[int, float]:
    """Mini-batch training passes over `indices`; returns the advanced step
    count and the sample-weighted mean loss. `prox` is (mu, reference state)
    adding mu * (w - w_ref) to every trainable gradient."""
    model.train()
    indices = np.asarray(indices)
    n = len(indices)
    if n == 0:
        raise DataError("empty training index set")
    steps_per_epoch = math.ceil(n / batch_size)
    params = model.named_parameters()
    loss_sum = 0.0
    seen = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, batch_size):
            sel = indices[perm[lo:lo + batch_size]]
            xb = Tensor(to_input(dataset.images[sel], dtype))
            loss = softmax_cross_entropy(model.forward(xb), dataset.labels[sel])
            model.zero_grad()
            loss.backward()
            if prox is not None:
                apply_prox_grads(params, prox[0], prox[1])
            if agc_cfg is not None:
                clip_model_grads(params, agc_cfg, model.head_param_names())
            optimizer.step(lr_at(schedule, step_count, steps_per_epoch))
            step_count += 1
            loss_sum += float(loss.data) * len(sel)
            seen += len(sel)
    return step_count, loss_sum / seen


def _load_state_partial(model, state: dict, skip: set[str]) -> None:
    for name, p in model.named_parameters().items():
        if name not in skip:
            p.data[...] = state[name]
    for name, buf in model.named_buffers().items():
        if name not in skip:
            buf[...] = state[name]


def local_update(client: ClientState, global_state: dict, *, method: FLMethodConfig,
                 dataset: Dataset, epochs: int, batch_size: int,
                 schedule: LrSchedule, agc_cfg: AGCConfig | None,
                 dtype=np.float32):
    """One client's round: load the broadcast state (batch-norm entries stay
    local under fedbn), train with the persistent optimizer, return the final
    local state and sample count."""
    if client.n_k == 0:
        raise DataError(f"client {client.id} has an empty dataset")
    skip = client.model.bn_param_names() if method.name == "fedbn" else set()
    _load_state_partial(client.model, global_state, skip)
    prox = None
    if method.name == "fedprox" and method.mu != 0.0:
        prox = (method.mu, global_state)
    client.step_count, mean_loss = train_epochs(
        client.model, client.optimizer, dataset, client.indices, client.rng,
        epochs=epochs, batch_size=batch_size, schedule=schedule,
        agc_cfg=agc_cfg, prox=prox, step_count=client.step_count, dtype=dtype)
    return client.id, client.model.state_dict(), client.n_k, mean_loss


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def aggregate_fedavg(results) -> dict:
    """Sample-count-weighted mean, summed in ascending client-id order."""
    if not results:
        raise ValueError("aggregate_fedavg: no client results")
    ordered = sorted(results, key=lambda r: r[0])
    keys = list(ordered[0][1].keys())
    for cid, state, _ in ordered[1:]:
        if list(state.keys()) != keys:
            raise ValueError(f"client {cid}: mismatched parameter registry")
    total = float(sum(nk for _, _, nk in ordered))
    out = {}
    for key in keys:
        acc = None
        for _, state, nk in ordered:
            term = state[key] * (nk / total)
            acc = term if acc is None else acc + term
        out[key] = acc
    return out


def aggregate_fedbn(results, global_state: dict, bn_names: set[str]) -> dict:
    """Weighted mean over everything except batch-norm entries, which keep
    their previous global values (clients keep their own local copies)."""
    merged = aggregate_fedavg(results)
    for name in bn_names:
        merged[name] = global_state[name].copy()
    return merged


class YogiState:
    """Server-side adaptive moments; v starts at tau^2 and stays positive."""

    def __init__(self, trainable_names, global_state: dict, tau: float):
        self.m = {n: np.zeros_like(global_state[n]) for n in trainable_names}
        self.v = {n: np.full_like(global_state[n], tau * tau) for n in trainable_names}


def yogi_server_step(yogi: YogiState, global_state: dict, results,
                     method: FLMethodConfig) -> dict:
    """Yogi update on the averaged client delta. Buffers (entries without
    server moments) take the plain weighted mean."""
    avg = aggregate_fedavg(results)
    out = {}
    for name, g in global_state.items():
        if name not in yogi.m:
            out[name] = avg[name]
            continue
        delta = avg[name] - g
        m = yogi.m[name]
        v = yogi.v[name]
        m *= method.beta1
        m += (1.0 - method.beta1) * delta
        d2 = delta * delta
        v -= (1.0 - method.beta2) * d2 * np.sign(v - d2)
        if not np.all(v > 0):
            raise NumericsError("Yogi second moment left the positive domain")
        out[name] = g + method.eta_server * m / (np.sqrt(v) + method.tau)
    return out


# ---------------------------------------------------------------------------
# rounds
# ---------------------------------------------------------------------------

def run_round(global_model: Network, global_state: dict, yogi, clients, *,
              method: FLMethodConfig, dataset: Dataset, test_set: Dataset,
              round_idx: int, epochs: int, batch_size: int,
              schedule: LrSchedule, agc_cfg: AGCConfig | None, dtype,
              threads: int = 1, all_client_sizes=None):
    """Broadcast -> parallel local updates -> aggregate -> evaluate."""
    with StopWatch() as sw:
        def one(client):
            return local_update(client, global_state, method=method,
                                dataset=dataset, epochs=epochs,
                                batch_size=batch_size, schedule=schedule,
                                agc_cfg=agc_cfg, dtype=dtype)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, clients))
        else:
            results = [one(c) for c in clients]

        locals_ = [(cid, state, nk) for cid, state, nk, _ in results]
        if method.name == "fedbn":
            new_state = aggregate_fedbn(locals_, global_state,
                                        global_model.bn_param_names())
        elif method.name == "fedyogi":
            new_state = yogi_server_step(yogi, global_state, locals_, method)
        else:
            new_state = aggregate_fedavg(locals_)

        global_model.load_state_dict(new_state)
        accuracy = evaluate(global_model, test_set.images, test_set.labels,
                            dtype=dtype)
    ordered = sorted(results, key=lambda r: r[0])
    total = sum(nk for _, _, nk, _ in ordered)
    mean_loss = sum(loss * nk for _, _, nk, loss in ordered) / total
    record = RoundRecord(round=round_idx, accuracy=accuracy, loss=mean_loss,
                         client_sizes=list(all_client_sizes or []),
                         seconds=sw.seconds)
    return new_state, record


def _load_data(exp) -> tuple[Dataset, Dataset]:
    d = exp.data
    if d.source == "synthetic":
        train = synth_dataset(exp.seed, d.num_classes, d.per_class, d.resolution, "train")
        test = synth_dataset(exp.seed, d.num_classes, d.test_per_class, d.resolution, "test")
    else:
        train = load_cifar10_binary(d.path, "train")
        test = load_cifar10_binary(d.path, "test")
    return train, test


def _build_partition(exp, train: Dataset):
    d = exp.data
    if d.partition_kind == "iid":
        part = partition_iid(train, d.num_clients, exp.seed)
    else:
        part = partition_label_skew(train, d.num_clients, d.target_ks,
                                    d.tolerance, exp.seed)
    ks = mean_pairwise_ks(part, train.labels, train.num_classes)
    return part, ks


def _make_optimizer(optim_cfg, params):
    if optim_cfg.kind == "adamw":
        return AdamW(params, weight_decay=optim_cfg.weight_decay)
    return SGD(params, momentum=optim_cfg.momentum)


def _make_schedule(optim_cfg, method: FLMethodConfig) -> LrSchedule:
    base = method.eta_client if method.name == "fedyogi" else optim_cfg.base_lr
    return LrSchedule(base, optim_cfg.warmup_epochs, optim_cfg.total_epochs)


def run_federated(exp, threads: int = 1, round_checkpoint=None,
                  capture: dict | None = None) -> ExperimentReport:
    """Execute the configured number of communication rounds (early-stopping
    at the target accuracy when one is set) and return the full report.
    `round_checkpoint(round_idx, state)` is invoked after every evaluation;
    `capture`, when given, receives the final state, model, and clients so a
    caller can persist optimizer state."""
    method = exp.fl.method
    dtype = exp.dtype
    train, test = _load_data(exp)
    partition, ks = _build_partition(exp, train)
    if method.name == "share":
        partition = build_shared_pool(partition, method.fraction, exp.seed)

    global_model = Network(exp.arch, dtype)
    global_model.init_params(np.random.default_rng([exp.seed, 11]))
    global_state = global_model.state_dict()
    trainable = list(global_model.named_parameters().keys())
    yogi = (YogiState(trainable, global_state, method.tau)
            if method.name == "fedyogi" else None)

    clients = []
    for cid in sorted(partition):
        model = Network(exp.arch, dtype)
        clients.append(ClientState(
            cid, partition[cid], model,
            _make_optimizer(exp.optimizer, model.named_parameters()),
            np.random.default_rng([exp.seed, 101, cid])))
    sizes = [c.n_k for c in clients]
    schedule = _make_schedule(exp.optimizer, method)

    with StopWatch() as sw0:
        acc0 = evaluate(global_model, test.images, test.labels, dtype=dtype)
    records = [RoundRecord(0, acc0, None, list(sizes), sw0.seconds)]
    if round_checkpoint:
        round_checkpoint(0, global_state)

    for r in range(1, exp.fl.rounds + 1):
        if exp.fl.clients_per_round is not None and exp.fl.clients_per_round < len(clients):
            rng = np.random.default_rng([exp.seed, 61, r])
            chosen = np.sort(rng.choice(len(clients), size=exp.fl.clients_per_round,
                                        replace=False))
            participating = [clients[i] for i in chosen]
        else:
            participating = clients
        global_state, record = run_round(
            global_model, global_state, yogi, participating, method=method,
            dataset=train, test_set=test, round_idx=r,
            epochs=exp.fl.local_epochs, batch_size=exp.fl.batch_size,
            schedule=schedule, agc_cfg=exp.optimizer.agc, dtype=dtype,
            threads=threads, all_client_sizes=sizes)
        records.append(record)
        if round_checkpoint:
            round_checkpoint(r, global_state)
        if exp.target_accuracy is not None and record.accuracy >= exp.target_accuracy:
            break

    if capture is not None:
        capture.update(state=global_state, model=global_model, clients=clients)
    params = count_params(exp.arch)
    rtt = (rounds_to_target(records, exp.target_accuracy)
           if exp.target_accuracy is not None else None)
    return ExperimentReport(
        config=exp.raw, params=params, partition_mean_ks=ks, records=records,
        final_accuracy=records[-1].accuracy,
        target_accuracy=exp.target_accuracy, rounds_to_target=rtt,
        tms=tms(params, rtt) if rtt is not None else None)


def central_train(exp, round_checkpoint=None,
                  capture: dict | None = None) -> ExperimentReport:
    """Train one model on the pooled training set with the same schedule and
    rng derivations as a single federated client; the report shape matches
    the federated one with rounds standing in for epochs."""
    dtype = exp.dtype
    train, test = _load_data(exp)
    model = Network(exp.arch, dtype)
    model.init_params(np.random.default_rng([exp.seed, 11]))
    optimizer = _make_optimizer(exp.optimizer, model.named_parameters())
    rng = np.random.default_rng([exp.seed, 101, 0])
    schedule = _make_schedule(exp.optimizer, exp.fl.method)
    indices = np.arange(len(train))

    with StopWatch() as sw0:
        acc0 = evaluate(model, test.images, test.labels, dtype=dtype)
    records = [RoundRecord(0, acc0, None, [len(train)], sw0.seconds)]
    if round_checkpoint:
        round_checkpoint(0, model.state_dict())

    step_count = 0
    epochs = exp.fl.rounds * exp.fl.local_epochs
    for e in range(1, epochs + 1):
        with StopWatch() as sw:
            step_count, mean_loss = train_epochs(
                model, optimizer, train, indices, rng, epochs=1,
                batch_size=exp.fl.batch_size, schedule=schedule,
                agc_cfg=exp.optimizer.agc, step_count=step_count, dtype=dtype)
            acc = evaluate(model, test.images, test.labels, dtype=dtype)
        records.append(RoundRecord(e, acc, mean_loss, [len(train)], sw.seconds))
        if round_checkpoint:
            round_checkpoint(e, model.state_dict())
        if exp.target_accuracy is not None and acc >= exp.target_accuracy:
            break

    if capture is not None:
        capture.update(state=model.state_dict(), model=model, optimizer=optimizer)
    params = count_params(exp.arch)
    rtt = (rounds_to_target(records, exp.target_accuracy)
           if exp.target_accuracy is not None else None)
    return ExperimentReport(
        config=exp.raw, params=params, partition_mean_ks=None, records=records,
        final_accuracy=records[-1].accuracy,
        target_accuracy=exp.target_accuracy, rounds_to_target=rtt,
        tms=tms(params, rtt) if rtt is not None else None)
