"""Federated training loop: warm-up, rounds, baselines, attacks, onboarding."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import client as cl
from .config import RunConfig
from .errors import ConfigError, ContractError, NumericError
from .graphdata import PartitionSpec, SyntheticTaskSpec, generate_synthetic, load_dataset, load_partition, partition
from .hypernet import HyperNetConfig, hypernet_forward, init_hypernet, layout_size, make_layout, unpack
from .numerics import AdamState, Tape, ops
from .sheaf import SheafConfig, collab_gcn, diffuse, init_collab_gcn, init_sheaf

log = logging.getLogger(__name__)

STATE_VERSION = 1
SERVER_SEED_OFFSET = 104_729
ATTACK_SEED_OFFSET = 15_485_863
INIT_SEED_OFFSET = 7_368_787


@dataclass
class ClientMetrics:
    cid: int
    train_loss: float
    val_acc: float | None
    test_acc: float | None


@dataclass
class RoundReport:
    round: int
    clients: list
    federated_accuracy: float
    honest_accuracy: float
    wall_time: float = 0.0

    def mean(self, attr):
        vals = [getattr(c, attr) for c in self.clients if getattr(c, attr) is not None]
        vals = [v for v in vals if not np.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")


@dataclass
class AttackSpec:
    kind: str = "none"
    tau: float = 0.0
    malicious_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "same_value", "gaussian"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.malicious_ratio <= 1.0:
            raise ConfigError("malicious_ratio must lie in [0, 1]")

    def choose(self, n):
        """Malicious client indices; fixed for the whole run."""
        if self.kind == "none":
            return np.zeros(0, dtype=np.int64)
        k = int(np.floor(self.malicious_ratio * n + 1e-9))
        rng = np.random.default_rng(self.seed)
        return np.sort(rng.choice(n, size=k, replace=False))


def apply_attack(x0, spec: AttackSpec, malicious, rng):
    """Replace the malicious rows of ``x0``; honest rows are untouched."""
    x = np.array(x0, dtype=np.float64, copy=True)
    d = x.shape[1]
    for i in malicious:
        if spec.kind == "same_value":
            x[i] = rng.normal(0.0, spec.tau) * np.ones(d)
        elif spec.kind == "gaussian":
            x[i] = rng.normal(0.0, spec.tau, size=d)
    return x


@dataclass
class ServerState:
    theta: dict
    phi: dict
    adam_theta: AdamState
    adam_phi: AdamState
    x0: np.ndarray | None = None
    round: int = 0


@dataclass
class MessageLog:
    """Counts of server<->client exchanges; one entry per broadcast/collection."""

    events: list = field(default_factory=list)

    def record(self, kind, rnd, count):
        self.events.append((kind, rnd, count))

    def count(self, kind, rnd=None):
        return sum(1 for k, r, _ in self.events if k == kind and (rnd is None or r == rnd))


def evaluate(clients, exclude=()):
    """Per-client metrics plus the unweighted mean test accuracy.

    Clients with an empty test mask are left out of the mean.
    """
    metrics = []
    for c in clients:
        metrics.append(ClientMetrics(c.cid, cl.train_loss(c), cl.accuracy(c, "val"), cl.accuracy(c, "test")))
    return metrics, federated_accuracy(metrics), federated_accuracy([m for m in metrics if m.cid not in set(exclude)])


def federated_accuracy(metrics):
    accs = []
    for m in metrics:
        if m.test_acc is None:
            log.warning("client %d has an empty test mask; excluded from federated accuracy", m.cid)
        else:
            accs.append(m.test_acc)
    return float(np.mean(accs)) if accs else float("nan")


def build_datasets(cfg: RunConfig):
    """Client datasets from a partition dir, a dataset dir, or the synthetic task."""
    if cfg.partition_path:
        datasets = load_partition(cfg.partition_path)
        if len(datasets) != cfg.clients:
            raise ConfigError(f"partition has {len(datasets)} clients but clients = {cfg.clients}")
        return datasets
    if cfg.dataset_path:
        graph, features, labels = load_dataset(cfg.dataset_path)
    else:
        graph, features, labels = generate_synthetic(synthetic_spec(cfg))
    spec = PartitionSpec(cfg.scenario, cfg.num_parts, cfg.samples_per_part, cfg.sample_fraction, cfg.seed)
    return partition(graph, features, labels, spec)


def synthetic_spec(cfg: RunConfig):
    return SyntheticTaskSpec(cfg.nodes_per_block, cfg.num_blocks, cfg.p_in, cfg.p_out, cfg.feature_dim,
                             cfg.feature_noise, cfg.label_skew, cfg.seed)


class Federation:
    """All state of one federated run: clients, server models, message log."""

    def __init__(self, cfg: RunConfig, datasets, client_ids=None):
        if not datasets:
            raise ConfigError("no clients")
        self.cfg = cfg
        ids = list(range(len(datasets))) if client_ids is None else list(client_ids)
        first = datasets[0]
        self.in_dim = first.features.shape[1]
        self.num_classes = first.num_classes
        for ds in datasets:
            if ds.features.shape[1] != self.in_dim or ds.num_classes != self.num_classes:
                raise ConfigError("all clients must share feature dim and class count")
        # Every client starts from the same published initial model, so
        # warm-up embeddings share one coordinate system.
        rng = np.random.default_rng(cfg.seed + INIT_SEED_OFFSET)
        self.init_params = cl.init_gcn(self.in_dim, cfg.hidden_dim, self.num_classes, rng)
        self.clients = [cl.make_client(i, ds, cfg.hidden_dim, cfg.seed + i, self.init_params)
                        for i, ds in zip(ids, datasets)]
        self.layout = make_layout(self.in_dim, cfg.hidden_dim, self.num_classes, cfg.generated)
        self.sheaf_cfg = SheafConfig(cfg.stalk_dim, cfg.sheaf_steps, cfg.sigma, cfg.laplacian_eps,
                                     cfg.share_sheaf_weights)
        self.hn_cfg = HyperNetConfig(cfg.hn_hidden, cfg.attention)
        self.attack = AttackSpec(cfg.attack_kind, cfg.attack_tau, cfg.attack_ratio, cfg.seed + ATTACK_SEED_OFFSET)
        self.malicious = self.attack.choose(len(self.clients))
        self.attack_rng = np.random.default_rng(cfg.seed + ATTACK_SEED_OFFSET + 1)
        self.messages = MessageLog()
        self._round = 0
        self.server = None
        self.global_params = None
        if cfg.method in ("fedsheafhn", "onehot_hn"):
            self.server = self._init_server()
        elif cfg.method == "fedavg":
            self.global_params = self.init_params

    @property
    def n(self):
        return len(self.clients)

    @property
    def honest(self):
        bad = set(int(i) for i in self.malicious)
        return [c for i, c in enumerate(self.clients) if i not in bad]

    def _init_server(self):
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed + SERVER_SEED_OFFSET)
        d = self.n if cfg.method == "onehot_hn" else cfg.embed_dim
        theta = {}
        if cfg.method == "fedsheafhn":
            if cfg.sheaf == "on":
                theta = init_sheaf(d, self.sheaf_cfg, rng)
            elif cfg.sheaf == "plain_gcn":
                theta = init_collab_gcn(d, rng)
        phi = init_hypernet(d, layout_size(self.layout), self.hn_cfg, rng)
        return ServerState(theta, phi, AdamState(lr=cfg.server_lr), AdamState(lr=cfg.server_lr))

    # -- server side ---------------------------------------------------------

    def client_embeddings(self):
        return np.stack([c.embedding for c in self.clients])

    def build_x0(self):
        x0 = self.client_embeddings()
        if len(self.malicious):
            x0 = apply_attack(x0, self.attack, self.malicious, self.attack_rng)
        return x0

    def server_forward(self, x0=None, tape=None):
        """(tape, theta nodes, phi nodes, X_Ts node, Omega node)."""
        cfg, server = self.cfg, self.server
        tape = tape or Tape()
        if cfg.method == "onehot_hn":
            x = tape.const(np.eye(self.n), "onehot")
        else:
            x = tape.const(server.x0 if x0 is None else x0, "X0")
        theta = {k: tape.param(v, k) for k, v in server.theta.items()}
        phi = {k: tape.param(v, k) for k, v in server.phi.items()}
        if cfg.method == "fedsheafhn" and cfg.sheaf == "on":
            x_ts = diffuse(x, theta, self.sheaf_cfg)
        elif cfg.method == "fedsheafhn" and cfg.sheaf == "plain_gcn":
            x_ts = collab_gcn(x, theta)
        else:
            x_ts = x
        omega = hypernet_forward(x_ts, phi, self.hn_cfg)
        return tape, theta, phi, x_ts, omega

    def server_update(self, tape, theta, phi, omega, deltas):
        grads = server_backward(tape, omega, deltas, {**theta, **phi}, self.cfg.literal_delta_sign)
        s = self.server
        if theta:
            s.adam_theta.update(s.theta, {k: grads[k] for k in theta})
        s.adam_phi.update(s.phi, {k: grads[k] for k in phi})
        return grads

    # -- protocol --------------------------------------------------------------

    def warmup(self):
        """Clients train from their initial models, then report embeddings."""
        cfg = self.cfg
        for c in self.clients:
            if self.global_params is not None:
                c.params = {k: v.copy() for k, v in self.global_params.items()}
            cl.local_train(c, cfg.local_epochs, cfg.client_lr)
            cl.refresh_embedding(c)
        if self.global_params is not None:
            self._aggregate()
        if self.server is not None:
            self.messages.record("collect", 0, self.n)
            self.server.x0 = self.build_x0()
        return self.client_embeddings()

    def refresh_due(self, rnd):
        cfg = self.cfg
        return cfg.dynamic_embedding and (rnd - 1) % cfg.embedding_refresh_period == 0 and rnd > 1

    def run_round(self):
        cfg = self.cfg
        if cfg.method == "local_only":
            for c in self.clients:
                cl.local_train(c, cfg.local_epochs, cfg.client_lr)
            return
        if cfg.method == "fedavg":
            self.messages.record("distribute", self._round, self.n)
            for c in self.clients:
                c.params = {k: v.copy() for k, v in self.global_params.items()}
                cl.local_train(c, cfg.local_epochs, cfg.client_lr)
            self.messages.record("collect", self._round, self.n)
            self._aggregate()
            return

        server = self.server
        if self.refresh_due(self._round):
            server.x0 = self.build_x0()
        tape, theta, phi, _, omega = self.server_forward()
        self.messages.record("distribute", self._round, self.n)
        deltas = np.zeros(omega.shape)
        for i, c in enumerate(self.clients):
            generated = unpack(omega.value[i], self.layout)
            c.params = {**c.params, **generated}
            initial = {k: v.copy() for k, v in c.params.items()}
            cl.local_train(c, cfg.local_epochs, cfg.client_lr)
            deltas[i] = cl.delta(initial, c.params, self.layout)
            if cfg.dynamic_embedding:
                cl.refresh_embedding(c)
        self.messages.record("collect", self._round, self.n)
        self.server_update(tape, theta, phi, omega, deltas)
        server.round += 1

    def _aggregate(self):
        # FedAvg is scored on the aggregated global model, as is standard.
        self.global_params = self._average()
        for c in self.clients:
            c.params = {k: v.copy() for k, v in self.global_params.items()}

    def _average(self):
        weights = np.array([max(int(c.dataset.train_mask.sum()), 0) for c in self.clients], dtype=np.float64)
        if weights.sum() == 0:
            weights = np.ones_like(weights)
        weights /= weights.sum()
        return {k: sum(w * c.params[k] for w, c in zip(weights, self.clients)) for k in cl.PARAM_NAMES}

    def report(self, rnd, wall_time=0.0):
        metrics, fed, honest = evaluate(self.clients, exclude=[self.clients[i].cid for i in self.malicious])
        return RoundReport(rnd, metrics, fed, honest, wall_time)

    def run(self, rounds=None, callback=None):
        """Warm-up plus ``rounds`` communication rounds; one report per round."""
        rounds = self.cfg.rounds if rounds is None else rounds
        start = time.perf_counter()
        self._round = 0
        self.warmup()
        reports = [self.report(0, time.perf_counter() - start)]
        if callback:
            callback(reports[-1])
        for rnd in range(1, rounds + 1):
            self._round = rnd
            t0 = time.perf_counter()
            try:
                self.run_round()
            except NumericError as exc:
                raise NumericError(exc.op, f"round {rnd}") from exc
            reports.append(self.report(rnd, time.perf_counter() - t0))
            if callback:
                callback(reports[-1])
        return reports

    # -- new clients -------------------------------------------------------------

    def latest_x0(self):
        return self.build_x0() if self.cfg.dynamic_embedding else self.server.x0

    def generate_for_new(self, x_new, x0=None):
        """Frozen server pass over the collaboration graph extended by ``x_new``."""
        if self.cfg.method != "fedsheafhn":
            raise ConfigError("onboarding needs data-driven embeddings (method = fedsheafhn)")
        x0 = self.latest_x0() if x0 is None else x0
        x_new = np.asarray(x_new, dtype=np.float64).reshape(1, -1)
        if x_new.shape[1] != x0.shape[1]:
            raise ContractError(f"new embedding has dim {x_new.shape[1]}, expected {x0.shape[1]}")
        _, _, _, _, omega = self.server_forward(np.vstack([x0, x_new]))
        return omega.value

    def onboard(self, dataset, cid):
        """Register one new client with the server models frozen.

        The client trains from the shared initial model to derive its
        embedding, uploads it, and receives its generated weights: one
        communication round.  It keeps the local part (biases) learned while
        deriving the embedding and, like every client, is scored after
        ``local_epochs`` of local training on the received model.
        """
        cfg = self.cfg
        new = cl.make_client(cid, dataset, cfg.hidden_dim, cfg.seed + cid, self.init_params)
        cl.local_train(new, cfg.local_epochs, cfg.client_lr)
        x_new = cl.graph_embedding(new)
        self.messages.record("onboard_collect", cid, 1)
        omega = self.generate_for_new(x_new)
        self.messages.record("onboard_distribute", cid, 1)
        new.params = {**new.params, **unpack(omega[-1], self.layout)}
        new.embedding = x_new
        cl.local_train(new, cfg.local_epochs, cfg.client_lr)
        return new, cl.accuracy(new, "test")


def server_backward(tape, omega, deltas, wrt, literal_sign=False):
    """Gradients of the server models from client deltas.

    The reverse pass is seeded at the generated-parameter node with upstream
    gradient ``-deltas`` so that descent moves the generated parameters
    towards the clients' trained ones (``+deltas`` if ``literal_sign``).
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape != omega.shape:
        raise ContractError(f"deltas {deltas.shape} do not match generated parameters {omega.shape}")
    upstream = deltas if literal_sign else -deltas
    names = list(wrt)
    grads = tape.backward(ops.inner(omega, upstream), [wrt[k] for k in names])
    return dict(zip(names, grads))


def save_state(path, fed: Federation):
    """Versioned ``.npz`` dump of server models, optimiser moments and client params."""
    s = fed.server
    if s is None:
        raise ConfigError("only hypernetwork methods have server state")
    arrays = {"meta/version": np.array(STATE_VERSION), "meta/round": np.array(s.round), "collab/X": s.x0}
    for group, params in (("theta", s.theta), ("phi", s.phi)):
        for k, v in params.items():
            arrays[f"{group}/{k}"] = v
    for group, adam in (("adam_theta", s.adam_theta), ("adam_phi", s.adam_phi)):
        arrays[f"{group}/step"] = np.array(adam.step)
        for k in adam.m:
            arrays[f"{group}/m/{k}"] = adam.m[k]
            arrays[f"{group}/v/{k}"] = adam.v[k]
    for c in fed.clients:
        for k, v in c.params.items():
            arrays[f"client/{c.cid}/{k}"] = v
        arrays[f"client/{c.cid}/embedding"] = c.embedding
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    manifest = "".join(f"{k}\t{'x'.join(map(str, np.shape(v))) or 'scalar'}\n" for k, v in sorted(arrays.items()))
    with open(str(path) + ".manifest.txt", "w", newline="\n") as fh:
        fh.write(manifest)


def load_state(path, fed: Federation):
    """Restore a state written by :func:`save_state` into ``fed``."""
    with np.load(path) as data:
        if int(data["meta/version"]) != STATE_VERSION:
            raise ConfigError(f"unsupported state version {int(data['meta/version'])}")
        s = fed.server
        s.round = int(data["meta/round"])
        s.x0 = data["collab/X"].copy()
        for group, params in (("theta", s.theta), ("phi", s.phi)):
            for k in params:
                params[k] = data[f"{group}/{k}"].copy()
        for group, adam in (("adam_theta", s.adam_theta), ("adam_phi", s.adam_phi)):
            adam.step = int(data[f"{group}/step"])
            prefix = f"{group}/m/"
            for key in data.files:
                if key.startswith(prefix):
                    name = key[len(prefix):]
                    adam.m[name] = data[key].copy()
                    adam.v[name] = data[f"{group}/v/{name}"].copy()
        for c in fed.clients:
            for k in c.params:
                c.params[k] = data[f"client/{c.cid}/{k}"].copy()
            c.embedding = data[f"client/{c.cid}/embedding"].copy()


@dataclass
class OnboardReport:
    train_ids: list
    new_ids: list
    train_accs: list
    new_accs: list
    round_trips: int

    @staticmethod
    def _mean(accs):
        accs = [a for a in accs if a is not None]
        return float(np.mean(accs)) if accs else float("nan")

    @property
    def train_mean(self):
        return self._mean(self.train_accs)

    @property
    def new_mean(self):
        return self._mean(self.new_accs)


def split_new_clients(n, new_ratio, seed):
    """Indices of (train, new) clients; ``floor(new_ratio * n)`` are held out."""
    k = int(np.floor(new_ratio * n + 1e-9))
    if k >= n:
        raise ConfigError("new_ratio leaves no clients to train the server")
    rng = np.random.default_rng(seed + SERVER_SEED_OFFSET + 2)
    new = np.sort(rng.choice(n, size=k, replace=False))
    train = np.setdiff1d(np.arange(n), new)
    return [int(i) for i in train], [int(i) for i in new]


def train_then_onboard(cfg: RunConfig, datasets):
    """Train the server on the train group, then onboard the held-out group."""
    train_ids, new_ids = split_new_clients(len(datasets), cfg.new_ratio, cfg.seed)
    fed = Federation(cfg, [datasets[i] for i in train_ids], client_ids=train_ids)
    reports = fed.run()
    return fed, reports, onboard_all(fed, datasets, new_ids, reports[-1])


def onboard_all(fed, datasets, new_ids, last_report):
    before = len(fed.messages.events)
    new_accs = [fed.onboard(datasets[i], i)[1] for i in new_ids]
    trips = sum(1 for kind, _, _ in fed.messages.events[before:] if kind == "onboard_distribute")
    train_accs = [m.test_acc for m in last_report.clients]
    return OnboardReport([c.cid for c in fed.clients], list(new_ids), train_accs, new_accs,
                         trips // max(len(new_ids), 1) if new_ids else 0)
