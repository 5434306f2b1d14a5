"""The communication-round loop: select, train locally, gate uploads, fuse, mix.

One round, mirroring a synchronous implementation:

1. the server picks ``s`` of the ``n`` devices uniformly without replacement;
2. each picked device runs ``E`` local epochs of per-sample SGD from its
   current parameters, producing a local update;
3. (``safl_extended`` only) each picked device scores the last broadcast
   global model against its local update on its private holdout and uploads
   with probability ``exp(-gap / gap_scale)``;
4. the server fuses the received updates into the new global model (an empty
   round leaves it unchanged);
5. every picked device folds the new global model into its parameters:
   plain averaging replaces them outright, the annealed variants blend per
   coordinate through a sampled mask;
6. metrics are recorded against the pooled-data optimum.

Every random draw comes from a stream dedicated to one (device, purpose)
pair, spawned deterministically from the run seed, so trajectories are a pure
function of the configuration and independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aggregation import ModelUpdate, WeightScheme, aggregate, weights
from .annealing import AnnealConfig, mix, sample_mask, selection_probability
from .objectives import Dataset, Objective, optimum_oracle
from .partition import PartitionSpec, partition_with_holdout
from .training import DivergenceError, LrSchedule, run_local_epochs
from .upload_gate import GateConfig, GateState, accuracy_proxy, decide_upload, performance_gap, upload_probability

ALGORITHMS = ("fedavg", "safl", "safl_extended")
LOCAL_SOLVERS = ("sgd", "oracle")


@dataclass(frozen=True)
class SimConfig:
    objective: Objective
    partition: PartitionSpec
    selected_per_round: int
    rounds: int
    local_epochs: int = 1
    algorithm: str = "fedavg"
    anneal: AnnealConfig = AnnealConfig(temperature=10.0, epsilon=0.5)
    gate: GateConfig | None = None
    weight_scheme: WeightScheme = WeightScheme("uniform")
    lr: LrSchedule = LrSchedule("constant", 0.01)
    seed: int = 0
    sample_order: str = "iid_draw"
    local_solver: str = "sgd"
    holdout_fraction: float = 0.2
    init_scale: float = 0.1
    early_stop_mse: float | None = None
    feedback_timing: str = "round_boundary"

    @property
    def n(self) -> int:
        return self.partition.n

    def __post_init__(self):
        if not (1 <= self.selected_per_round <= self.n):
            raise ValueError("selected_per_round must lie in [1, n]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.local_solver not in LOCAL_SOLVERS:
            raise ValueError(f"unknown local solver {self.local_solver!r}")
        if self.algorithm == "safl_extended" and self.gate is None:
            raise ValueError("safl_extended requires a gate configuration")
        if self.local_solver == "sgd" and not self.objective.is_smooth:
            raise ValueError("non-smooth objectives cannot be trained by SGD; use local_solver='oracle'")
        if self.feedback_timing != "round_boundary":
            raise NotImplementedError("only round_boundary feedback timing is implemented")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ValueError("holdout_fraction must lie in [0, 1)")


@dataclass
class DeviceState:
    device_id: int
    params: np.ndarray
    shard: Dataset
    holdout: Dataset
    full_size: int
    train_rng: np.random.Generator
    mask_rng: np.random.Generator
    gate_rng: np.random.Generator
    gate: GateState = field(default_factory=GateState)
    steps_done: int = 0

    def eval_set(self) -> Dataset:
        return self.holdout if len(self.holdout) > 0 else self.shard


@dataclass
class ServerState:
    global_params: np.ndarray
    rng: np.random.Generator
    round_index: int = 0


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    mse: float
    accuracy: float
    uploads: int
    selection_prob: float | None
    device_mse: float


@dataclass
class RunResult:
    records: list[RoundRecord]
    w_star: np.ndarray
    pooled: Dataset
    devices: list[DeviceState]
    server: ServerState
    init_params: np.ndarray  # (n, param_dim) snapshot of the device initialisations


def global_estimate(devices: list[DeviceState], wts: np.ndarray) -> np.ndarray:
    """Weighted average of the devices' current parameter vectors."""
    if len(devices) != len(wts):
        raise ValueError("one weight per device required")
    stacked = np.stack([d.params for d in devices])
    return np.asarray(wts, dtype=np.float64) @ stacked


def build_state(
    config: SimConfig,
    dataset: Dataset | None = None,
    shards: list[Dataset] | None = None,
) -> tuple[list[DeviceState], ServerState, Dataset, np.ndarray]:
    """Materialise devices, server, pooled training data, and its optimum.

    ``shards`` bypasses the partitioner for tests that need exact shard
    contents; otherwise ``dataset`` is partitioned per the config.
    """
    obj = config.objective
    if shards is None:
        if dataset is None:
            raise ValueError("either a dataset or explicit shards are required")
        pairs = partition_with_holdout(dataset, config.partition, config.holdout_fraction)
    else:
        if len(shards) != config.n:
            raise ValueError("need exactly one shard per device")
        pairs = []
        for shard in shards:
            m = len(shard)
            n_hold = min(int(math.floor(m * config.holdout_fraction)), m - 1)
            pairs.append((shard.subset(np.arange(n_hold, m)), shard.subset(np.arange(n_hold))))

    root = np.random.SeedSequence(config.seed)
    server_ss, *device_ss = root.spawn(1 + config.n)
    devices = []
    for k, (train, hold) in enumerate(pairs):
        init_ss, train_ss, mask_ss, gate_ss = device_ss[k].spawn(4)
        init_rng = np.random.default_rng(init_ss)
        params = config.init_scale * init_rng.standard_normal(obj.param_dim)
        devices.append(
            DeviceState(
                device_id=k,
                params=params,
                shard=train,
                holdout=hold,
                full_size=len(train) + len(hold),
                train_rng=np.random.default_rng(train_ss),
                mask_rng=np.random.default_rng(mask_ss),
                gate_rng=np.random.default_rng(gate_ss),
            )
        )
    server = ServerState(
        global_params=np.zeros(obj.param_dim),
        rng=np.random.default_rng(server_ss),
    )
    pooled = Dataset.concat([d.shard for d in devices])
    w_star = optimum_oracle(obj, pooled)
    return devices, server, pooled, w_star


def _device_p(config: SimConfig, device: DeviceState, round_index: int) -> float:
    clock = round_index if config.anneal.clock == "rounds" else device.steps_done
    return selection_probability(clock, config.anneal.temperature)


def run_round(
    server: ServerState,
    devices: list[DeviceState],
    config: SimConfig,
    round_index: int,
    *,
    pooled: Dataset,
    w_star: np.ndarray,
    observer=None,
) -> RoundRecord:
    """Execute one communication round and return its metrics."""
    obj = config.objective
    chosen = np.sort(server.rng.choice(config.n, size=config.selected_per_round, replace=False))
    selected = [devices[int(k)] for k in chosen]
    stale_global = server.global_params

    local_updates: dict[int, np.ndarray] = {}
    gate_info: dict[int, dict] = {}
    received: list[ModelUpdate] = []
    for dev in selected:
        if config.local_solver == "oracle":
            z = optimum_oracle(obj, dev.shard)
        else:
            try:
                z, steps = run_local_epochs(
                    dev.params,
                    dev.shard,
                    obj,
                    config.local_epochs,
                    config.lr,
                    dev.train_rng,
                    start_step=dev.steps_done,
                    order=config.sample_order,
                )
            except DivergenceError as err:
                raise DivergenceError(
                    f"device {dev.device_id} diverged in round {round_index}: {err}",
                    round_index=round_index,
                ) from err
            dev.steps_done += steps
        local_updates[dev.device_id] = z

        uploads_update = True
        if config.algorithm == "safl_extended":
            eval_set = dev.eval_set()
            h_global = accuracy_proxy(stale_global, eval_set, obj, config.gate.proxy)
            h_local = accuracy_proxy(z, eval_set, obj, config.gate.proxy)
            gap = performance_gap(h_global, h_local, config.gate.eps_div)
            q = upload_probability(gap, config.gate.gap_scale)
            dev.gate.upload_prob = q
            uploads_update = decide_upload(q, dev.gate_rng)
            gate_info[dev.device_id] = {"gap": gap, "q": q, "uploaded": uploads_update}
        if uploads_update:
            received.append(ModelUpdate(dev.device_id, z, dev.full_size))

    if received:
        agg_w = weights(config.weight_scheme, received, z_ref=stale_global)
        server.global_params = aggregate(received, agg_w)
        if not np.isfinite(server.global_params).all():
            raise DivergenceError(
                f"aggregate diverged in round {round_index}", round_index=round_index
            )
    server.round_index = round_index

    p_values = []
    for dev in selected:
        z = local_updates[dev.device_id]
        if config.algorithm == "fedavg":
            dev.params = server.global_params.copy()
        else:
            p = _device_p(config, dev, round_index)
            p_values.append(p)
            mask = sample_mask(obj.param_dim, p, config.anneal.epsilon, dev.mask_rng, config.anneal.mask_mode)
            dev.params = mix(mask, server.global_params, z)

    participant_updates = [
        ModelUpdate(d.device_id, local_updates[d.device_id], d.full_size) for d in selected
    ]
    # metric evaluation may overflow on a nearly divergent run; the finite
    # checks above are the divergence authority, not numpy warnings here
    with np.errstate(over="ignore", invalid="ignore"):
        record_w = weights(config.weight_scheme, participant_updates, z_ref=stale_global)
        estimate = global_estimate(selected, record_w)
        diffs = np.stack([d.params for d in selected]) - w_star
        device_mse = float(record_w @ (diffs * diffs).sum(axis=1))
        proxy_kind = "holdout_accuracy" if obj.is_classification else "inverse_risk"
        record = RoundRecord(
            round_index=round_index,
            mse=float(np.sum((estimate - w_star) ** 2)),
            accuracy=accuracy_proxy(estimate, pooled, obj, proxy_kind),
            uploads=len(received),
            selection_prob=(float(np.mean(p_values)) if p_values else None),
            device_mse=device_mse,
        )
    if observer is not None:
        observer(record, server, devices, {"selected": [d.device_id for d in selected], "locals": local_updates, "gate": gate_info})
    return record


def run(
    config: SimConfig,
    dataset: Dataset | None = None,
    shards: list[Dataset] | None = None,
    observer=None,
) -> RunResult:
    """Run the configured number of rounds; a fixed config yields one trajectory."""
    devices, server, pooled, w_star = build_state(config, dataset, shards)
    init_params = np.stack([d.params for d in devices])
    records: list[RoundRecord] = []
    for r in range(1, config.rounds + 1):
        record = run_round(server, devices, config, r, pooled=pooled, w_star=w_star, observer=observer)
        records.append(record)
        if config.early_stop_mse is not None and record.mse < config.early_stop_mse:
            break
    return RunResult(
        records=records,
        w_star=w_star,
        pooled=pooled,
        devices=devices,
        server=server,
        init_params=init_params,
    )
