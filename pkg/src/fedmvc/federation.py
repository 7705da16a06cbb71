"""Federated round loop: local training, balanced aggregation, broadcast.

Clients are mutually independent within a round and may train on a
thread pool; determinism holds in either mode because every client owns
its data, parameters, and random stream, and the server always reduces
in ascending client-id order.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import (
    CLIENT_FULL,
    CLIENT_PARTIAL,
    CLIENT_SINGLE,
    ClientShard,
    MultiViewDataset,
    client_type_for,
    assign_views,
    dirichlet_partition,
)
from .errors import ConfigError, DimensionError, TrainingError
from .losses import (
    LossComponents,
    LossConfig,
    drift_loss,
    feature_contrast_full,
    label_contrast,
    partial_contrast,
    reconstruction_loss,
    single_view_contrast,
    total_loss,
)
from .model import (
    Architecture,
    ModelParams,
    encode,
    encode_decode,
    forward_views,
    high_features,
    infer_fused,
    init_params,
)
from .tensor import Param, Tape, make_optimizer

ALPHA_C_MODES = ("linear", "quadratic", "binary", "uniform")


@dataclass(frozen=True)
class RunSeeds:
    """Independent random streams derived from one master seed."""

    data: np.random.SeedSequence
    partition: np.random.SeedSequence
    assign: np.random.SeedSequence
    init: np.random.SeedSequence
    train: np.random.SeedSequence
    evaluation: np.random.SeedSequence


def derive_seeds(master_seed: int) -> RunSeeds:
    return RunSeeds(*np.random.SeedSequence(master_seed).spawn(6))


@dataclass(frozen=True)
class ClientInfo:
    client_id: int
    n_samples: int
    n_views: int


@dataclass
class RoundReport:
    round_index: int
    client_losses: dict[int, dict[str, float]]
    weights: list[float]
    wall_time: float


@dataclass
class ClientState:
    """One participant: its shard, weights, and frozen previous-round copy.

    ``frozen_prev`` is refreshed to an exact copy of ``params`` at the end
    of every local training round and never receives gradients. ``views``
    holds only the rows and views this client owns; nothing else about the
    dataset is reachable from here. The rng is consumed in a fixed order:
    one permutation per local epoch, then one noise draw per batch on
    single-view clients.
    """

    shard: ClientShard
    views: dict[int, np.ndarray]
    params: ModelParams
    frozen_prev: ModelParams
    rng: np.random.Generator
    optimizer: object | None = None


@dataclass
class ServerState:
    global_params: ModelParams
    round_index: int = 0
    registry: list[ClientInfo] = field(default_factory=list)


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    chunks = [order[s:s + batch_size] for s in range(0, n, batch_size)]
    # a singleton tail cannot feed the pairwise contrast terms; fold it in
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    yield from chunks


def pretrain_client(client: ClientState, epochs: int, lr: float,
                    batch_size: int, optimizer_mode: str = "adam") -> dict[str, float]:
    """Warm up the client's autoencoders on reconstruction alone."""
    if not client.views:
        raise ConfigError(f"client {client.shard.client_id} has no data")
    trainable = client.params.trainable_params(client.shard.view_subset)
    opt = make_optimizer(optimizer_mode, lr)
    n = client.shard.n_samples
    total, steps = 0.0, 0
    for _ in range(epochs):
        for rows in _batches(client.rng, n, batch_size):
            tape = Tape()
            order = sorted(client.views)
            recons = []
            for v in order:
                _, xhat = encode_decode(tape, client.params, client.views[v][rows], v)
                recons.append(xhat)
            loss = reconstruction_loss([client.views[v][rows] for v in order], recons)
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise TrainingError(
                    f"client {client.shard.client_id}: non-finite warm-up loss")
            tape.backward(loss)
            opt.step(trainable)
            total += value
            steps += 1
    return {"recon": total / steps if steps else 0.0}


def _train_step(client: ClientState, rows: np.ndarray, global_params: ModelParams,
                loss_cfg: LossConfig, use_contrast: bool, use_drift: bool,
                trainable: Sequence[Param]) -> dict[str, float]:
    shard = client.shard
    ctype = shard.client_type
    views_b = {v: x[rows] for v, x in client.views.items()}
    order = sorted(views_b)
    tape = Tape()
    want_probs = use_contrast and ctype == CLIENT_FULL
    fwd = forward_views(tape, client.params, views_b, want_probs=want_probs)
    comps = LossComponents(
        recon=reconstruction_loss([views_b[v] for v in order],
                                  [fwd.recons[v] for v in order]))

    noisy_feat = None
    if ctype == CLIENT_SINGLE and (use_contrast or use_drift):
        (v0,) = shard.view_subset
        x = views_b[v0]
        noisy = x + client.rng.standard_normal(x.shape) * loss_cfg.sigma_noise
        noisy_feat = high_features(tape, client.params,
                                   encode(tape, client.params, noisy, v0))

    zero = lambda: tape.constant([[0.0]])
    if ctype == CLIENT_FULL:
        if use_contrast:
            comps.feature = feature_contrast_full(
                [fwd.feats[v] for v in order], loss_cfg.tau)
            comps.label = label_contrast([fwd.probs[v] for v in order], loss_cfg.tau)
        else:
            comps.feature, comps.label = zero(), zero()
    elif ctype == CLIENT_PARTIAL:
        # a one-sample shard has no in-batch negatives to contrast against
        if use_contrast and rows.size >= 2:
            comps.partial = partial_contrast(
                fwd.fused, [fwd.feats[v] for v in order], loss_cfg.tau)
        else:
            comps.partial = zero()
    else:
        (v0,) = shard.view_subset
        comps.single = (single_view_contrast(fwd.fused, fwd.feats[v0], noisy_feat,
                                             loss_cfg.tau)
                        if use_contrast else zero())

    if use_drift:
        if ctype == CLIENT_FULL:
            pos = infer_fused(client.frozen_prev, views_b)
            neg = infer_fused(global_params, views_b)
        elif ctype == CLIENT_PARTIAL:
            pos = infer_fused(global_params, views_b)
            neg = infer_fused(client.frozen_prev, views_b)
        else:
            pos = infer_fused(global_params, views_b)
            neg = noisy_feat.value.copy()  # current model on noisy input, detached
        leaves = [tape.leaf(p) for p in trainable]
        global_values = [p.value for p in
                         global_params.trainable_params(shard.view_subset)]
        comps.drift = drift_loss(fwd.fused, pos, neg, leaves, global_values,
                                 loss_cfg.tau, loss_cfg.mu)

    total = total_loss(ctype, comps, loss_cfg.alpha)
    value = float(total.value[0, 0])
    if not np.isfinite(value):
        raise TrainingError(f"client {shard.client_id}: non-finite training loss")
    tape.backward(total)
    client.optimizer.step(trainable)

    contrast = 0.0
    for part in (comps.feature, comps.label, comps.partial, comps.single):
        if part is not None:
            contrast += float(part.value[0, 0])
    return {
        "recon": float(comps.recon.value[0, 0]),
        "contrast": contrast,
        "drift": float(comps.drift.value[0, 0]) if comps.drift is not None else 0.0,
        "total": value,
    }


def local_train_round(client: ClientState, global_params: ModelParams, config,
                      round_index: int) -> dict[str, float]:
    """One round of local optimization, then refresh the frozen snapshot.

    The drift term is active from round 2 on: in round 1 neither the
    frozen snapshot nor the global model has moved past initialization,
    so there is nothing meaningful to contrast against.
    """
    if global_params is None:
        raise ValueError("local training requires the broadcast global parameters")
    if round_index < 1:
        raise ValueError(f"round_index must be >= 1, got {round_index}")
    loss_cfg = LossConfig(tau=config.tau, alpha=config.alpha, mu=config.mu,
                          sigma_noise=config.sigma_noise)
    use_contrast = not config.no_contrast
    use_drift = round_index >= 2 and not config.no_drift
    trainable = client.params.trainable_params(client.shard.view_subset)
    client.optimizer = make_optimizer(config.optimizer, config.lr)

    sums: dict[str, float] = {}
    steps = 0
    n = client.shard.n_samples
    for _ in range(config.local_epochs):
        for rows in _batches(client.rng, n, config.batch_size):
            stats = _train_step(client, rows, global_params, loss_cfg,
                                use_contrast, use_drift, trainable)
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
    client.frozen_prev = client.params.clone()
    if steps == 0:
        return {"recon": 0.0, "contrast": 0.0, "drift": 0.0, "total": 0.0}
    return {k: v / steps for k, v in sums.items()}


def _coverage_factor(n_views: int, total_views: int, mode: str) -> float:
    ratio = n_views / total_views
    if mode == "linear":
        return ratio
    if mode == "quadratic":
        return ratio ** 2
    if mode == "binary":
        return 1.0 if n_views == total_views else 0.5
    if mode == "uniform":
        return 1.0
    raise ConfigError(f"unknown alpha_c_mode {mode!r} (expected one of {ALPHA_C_MODES})")


def compute_weights(registry: Sequence[ClientInfo], total_views: int,
                    mode: str = "linear") -> np.ndarray:
    """Aggregation weights: sample count scaled by view coverage, normalized."""
    if not registry:
        raise ValueError("cannot compute weights for an empty client registry")
    raw = []
    for info in registry:
        if info.n_samples < 1:
            raise ConfigError(f"client {info.client_id} reports zero samples")
        if not 1 <= info.n_views <= total_views:
            raise ConfigError(
                f"client {info.client_id} reports {info.n_views} views of {total_views}")
        raw.append(_coverage_factor(info.n_views, total_views, mode) * info.n_samples)
    raw = np.asarray(raw, dtype=np.float64)
    return raw / raw.sum()


def _weighted_param_lists(param_lists: Sequence[Sequence[Param]],
                          weights: Sequence[float]) -> list[Param]:
    out = []
    for slot in zip(*param_lists):
        shape = slot[0].value.shape
        acc = np.zeros(shape)
        for p, w in zip(slot, weights):
            if p.value.shape != shape:
                raise DimensionError(
                    f"parameter layout mismatch: {p.value.shape} vs {shape}")
            acc += w * p.value
        out.append(Param(acc))
    return out


def aggregate(prev_global: ModelParams, client_params: Sequence[ModelParams],
              shards: Sequence[ClientShard], weights: Sequence[float]) -> ModelParams:
    """Weighted model average with per-view masking.

    Shared nets average over every client. A view's autoencoder averages
    over the clients that actually own the view, with their weights
    renormalized; a view owned by nobody keeps the previous global values.
    Clients are processed in ascending id order so the reduction is
    bit-exact deterministic.
    """
    if not (len(client_params) == len(shards) == len(weights)):
        raise ValueError("client params, shards, and weights must align")
    order = sorted(range(len(shards)), key=lambda i: shards[i].client_id)
    client_params = [client_params[i] for i in order]
    shards = [shards[i] for i in order]
    weights = np.asarray([weights[i] for i in order], dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"aggregation weights sum to {weights.sum()}, expected 1")

    arch = prev_global.arch
    encoders, decoders = [], []
    for v in range(arch.n_views):
        owners = [i for i, s in enumerate(shards) if v in s.view_subset]
        if not owners:
            encoders.append([p.copy() for p in prev_global.encoders[v]])
            decoders.append([p.copy() for p in prev_global.decoders[v]])
            continue
        w = weights[owners]
        w = w / w.sum()
        encoders.append(_weighted_param_lists(
            [client_params[i].encoders[v] for i in owners], w))
        decoders.append(_weighted_param_lists(
            [client_params[i].decoders[v] for i in owners], w))
    feature_net = _weighted_param_lists(
        [p.feature_net for p in client_params], weights)
    cluster_head = _weighted_param_lists(
        [p.cluster_head for p in client_params], weights)
    return ModelParams(arch, encoders, decoders, feature_net, cluster_head)


def broadcast(server: ServerState, clients: Sequence[ClientState]) -> None:
    """Replace every client's working params with the global model.

    Frozen snapshots are left untouched; repeated broadcasts are idempotent.
    """
    for c in clients:
        c.params = server.global_params.clone()


def build_clients(dataset: MultiViewDataset, shards: Sequence[ClientShard],
                  base_params: ModelParams,
                  train_seed: np.random.SeedSequence) -> list[ClientState]:
    """Materialize client states; each holds only its own rows and views."""
    children = train_seed.spawn(len(shards))
    clients = []
    for shard, child in zip(shards, children):
        expected = client_type_for(shard.n_views, dataset.n_views)
        if shard.client_type != expected:
            raise ConfigError(
                f"client {shard.client_id}: type {shard.client_type!r} does not "
                f"match a {shard.n_views}-of-{dataset.n_views} view subset")
        if any(not 0 <= v < dataset.n_views for v in shard.view_subset):
            raise ConfigError(
                f"client {shard.client_id}: view subset {shard.view_subset} out "
                f"of range for a {dataset.n_views}-view dataset")
        views = {v: dataset.views[v][shard.sample_indices].copy()
                 for v in shard.view_subset}
        clients.append(ClientState(
            shard=shard,
            views=views,
            params=base_params.clone(),
            frozen_prev=base_params.clone(),
            rng=np.random.default_rng(child),
        ))
    return clients


def _map_clients(fn: Callable, clients: Sequence[ClientState], threads: int) -> list:
    if threads <= 1:
        return [fn(c) for c in clients]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, clients))


def run_federation(config, dataset: MultiViewDataset,
                   seeds: RunSeeds | None = None,
                   initial_global: ModelParams | None = None,
                   round_hook: Callable[[ServerState, RoundReport], None] | None = None,
                   ) -> tuple[ServerState, list[RoundReport]]:
    """Full pipeline: partition, warm-up, then R rounds of train/aggregate.

    Deterministic per master seed; ``round_hook`` (if given) runs after
    each round's broadcast with the updated server state.
    """
    if seeds is None:
        seeds = derive_seeds(config.seed)
    if dataset.labels is None and config.dirichlet_beta is not None:
        raise ConfigError(
            "dirichlet_beta: label-skewed partitioning needs a labeled dataset "
            "(use dirichlet_beta=iid)")
    work = dataset.standardized() if config.standardize else dataset

    assignments = assign_views(config.n_clients, work.n_views, config.scenario,
                               seeds.assign, counts=config.mixed_counts)
    parts = dirichlet_partition(
        work.labels if work.labels is not None else np.zeros(work.n_samples),
        config.n_clients, config.dirichlet_beta, seeds.partition)
    shards = [ClientShard(i, ctype, subset, idx)
              for i, ((ctype, subset), idx) in enumerate(zip(assignments, parts))]

    arch = Architecture(work.view_dims, work.n_clusters, config.latent_dim,
                        config.high_dim, config.hidden)
    if initial_global is None:
        initial_global = init_params(arch, seeds.init)
    elif initial_global.arch != arch:
        raise ConfigError(
            f"resume checkpoint architecture {initial_global.arch} does not match "
            f"the configured architecture {arch}")
    server = ServerState(global_params=initial_global,
                         registry=[ClientInfo(s.client_id, s.n_samples, s.n_views)
                                   for s in shards])
    clients = build_clients(work, shards, server.global_params, seeds.train)
    threads = 1 if config.deterministic else max(1, config.threads)

    _map_clients(
        lambda c: pretrain_client(c, config.warmup_epochs, config.lr,
                                  config.batch_size, config.optimizer),
        clients, threads)

    weight_mode = "uniform" if config.fedavg else config.alpha_c_mode
    reports: list[RoundReport] = []
    for r in range(1, config.rounds + 1):
        t0 = time.perf_counter()
        try:
            losses = _map_clients(
                lambda c: local_train_round(c, server.global_params, config, r),
                clients, threads)
        except TrainingError as err:
            raise TrainingError(f"round {r}: {err}") from err
        weights = compute_weights(server.registry, work.n_views, weight_mode)
        server.global_params = aggregate(server.global_params,
                                         [c.params for c in clients],
                                         shards, weights)
        server.round_index = r
        broadcast(server, clients)
        report = RoundReport(
            round_index=r,
            client_losses={c.shard.client_id: stats
                           for c, stats in zip(clients, losses)},
            weights=[float(w) for w in weights],
            wall_time=time.perf_counter() - t0,
        )
        reports.append(report)
        if round_hook is not None:
            round_hook(server, report)
    return server, reports
