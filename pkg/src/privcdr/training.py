"""Two-domain training: per-domain trainers, the joint step, early stopping and ``fit``.

Each domain owns its parameters, optimizer state and temperature. Per step a
domain runs its forward pass, ships its obfuscated bundle to the peer, and
finishes with the contrastive terms that need the peer's bundle. The peer's
matrices arrive as constants, so each side's backward pass yields exactly
its share of the joint gradient.

``fit`` runs the two domains as two workers, threads (``inproc``) or
processes joined by a loopback socket (``socket``). An orchestrator gets
only per-epoch scalars from them and decides when to stop; embeddings only
ever travel over the exchange transport.
"""

from __future__ import annotations

import json
import math
import multiprocessing as mp
import threading
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .datasets import DOMAINS, PreparedData, PreparedDomain, sample_negatives
from .disentangle import DisentangledBundle, disentangle
from .evaluation import MetricsSummary, config_hash, metrics_document, rank_from_scores, sample_candidates, summarize
from .exchange import InProcessTransport, SocketTransport, decode_bundle, encode_bundle, exchange_session
from .model import DomainModel, TrainConfig, domain_graph, feature_tensors, raw_dims
from .numeric import Adam, Tape, Tensor, save_checkpoint
from .objectives import contrastive_total, inter_loss, intra_loss, prediction_loss, total_loss
from .privacy import ObfuscatedBundle, PrivacyConfig, obfuscate

EVAL_STREAM = 0xE7A1
_NEG_STREAM, _PERM_STREAM, _MASK_STREAM = 1, 2, 3


class TrainingError(RuntimeError):
    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass(frozen=True)
class StepLosses:
    prd: float
    intra: float
    inter: float


def run_hash(cfg: TrainConfig, data: PreparedData) -> str:
    return config_hash({"train": cfg.as_dict(), "data": data.manifest_hash()})


class DomainRuntime:
    """A domain's model plus the fixed inputs it needs to score users."""

    def __init__(self, part: PreparedDomain, cfg: TrainConfig, eval_seed: int = 0):
        self.part, self.cfg, self.domain = part, cfg, part.domain
        self.code = DOMAINS.index(part.domain)
        dt = cfg.np_dtype
        self.model = DomainModel(part.domain, part.n_users, part.n_items, raw_dims(part), cfg)
        self.graph = domain_graph(part, dt)
        self.features = feature_tensors(part, dt)
        self.privacy = PrivacyConfig(cfg.lambda_used, seed=cfg.seed)
        self.candidates = sample_candidates(part, cfg.eval_negatives, eval_seed)

    def _eval_forward(self) -> tuple[ObfuscatedBundle, Tensor]:
        h_user, h_item = self.model.encode(self.graph, self.features)
        p_s, p_c = disentangle(h_user, self.model.mlp_s, self.model.mlp_c)
        # the augmented slots are unused at evaluation; reuse the clean views
        q = obfuscate(DisentangledBundle(self.domain, p_s, p_c, p_s, p_c), self.privacy, self.code, EVAL_STREAM)
        return q, h_item

    def eval_bundle(self) -> ObfuscatedBundle:
        """Obfuscated common/specific embeddings under the fixed evaluation noise."""
        return self._eval_forward()[0]

    def scores(self) -> np.ndarray:
        """Predictor logits for every user's candidate list, shape ``(m, 1 + negatives)``."""
        q, h_item = self._eval_forward()
        return self.model.predictor.candidate_logits(self.model.preferences(q).data, h_item.data, self.candidates)

    def evaluate(self) -> MetricsSummary:
        return summarize(self.domain, rank_from_scores(self.scores()), self.cfg.eval_k)


class DomainTrainer(DomainRuntime):
    def __init__(self, part: PreparedDomain, cfg: TrainConfig, eval_seed: int = 0):
        super().__init__(part, cfg, eval_seed)
        self.optim = Adam(self.model.parameters(), lr=cfg.lr)
        self._rows = None
        self._pending = None

    @property
    def n_rows(self) -> int:
        """Training rows per epoch: positives plus sampled negatives."""
        return self.part.split.train.n_interactions * (1 + self.cfg.neg_ratio)

    def begin_epoch(self, epoch: int) -> None:
        train, seed = self.part.split.train, self.cfg.seed
        nu, ni, nl = sample_negatives(train, self.cfg.neg_ratio, seed=[seed, self.code, epoch, _NEG_STREAM])
        users = np.concatenate([train.pairs[:, 0], nu])
        items = np.concatenate([train.pairs[:, 1], ni])
        labels = np.concatenate([np.ones(train.n_interactions, dtype=np.int64), nl])
        perm = np.random.default_rng([seed, self.code, epoch, _PERM_STREAM]).permutation(len(users))
        self._rows = (users[perm], items[perm], labels[perm])

    def batch(self, step: int):
        """Rows ``step*bs ...`` of the shuffled epoch, wrapping at the end."""
        if self._rows is None:
            raise TrainingError("begin_epoch must be called before batch")
        bs = self.cfg.batch_size
        idx = np.arange(step * bs, (step + 1) * bs) % len(self._rows[0])
        return tuple(a[idx] for a in self._rows)

    def forward(self, epoch: int, step: int, batch=None) -> ObfuscatedBundle:
        """Local half of a step; returns the bundle to send to the peer."""
        model, cfg = self.model, self.cfg
        self.optim.zero_grad()
        users, items, labels = self.batch(step) if batch is None else batch
        tape = Tape()
        with tape:
            h_user, h_item = model.encode(self.graph, self.features)
            dis = model.disentangle(h_user, np.random.default_rng([cfg.seed, self.code, epoch, step, _MASK_STREAM]))
            q = obfuscate(dis, self.privacy, self.code, epoch, step)
            prd = prediction_loss(model.preferences(q), h_item, users, items, labels, model.predictor)
            intra = intra_loss(q.common, q.specific, q.common_aug, q.specific_aug, model.temperature(),
                               cfg.similarity)
        self._pending = (tape, q, prd, intra, epoch, step)
        return q

    def finish(self, peer: ObfuscatedBundle) -> StepLosses:
        """Contrastive terms against the peer's bundle, backward pass, and update."""
        if self._pending is None:
            raise TrainingError("finish called without a pending forward")
        tape, q, prd, intra, epoch, step = self._pending
        self._pending = None
        cfg = self.cfg
        with tape:
            a, b = (q, peer) if self.domain == "A" else (peer, q)
            inter = inter_loss(a.common, a.specific, b.common, b.specific, self.model.temperature(),
                               cfg.similarity)
            # the peer's intra term does not depend on our parameters
            local_c = contrastive_total(intra, 0.0, inter, cfg.uses("intra"), cfg.uses("inter"))
            loss = total_loss(prd, 0.0, local_c, cfg.alpha)
        values = StepLosses(prd.item(), intra.item(), inter.item())
        if not math.isfinite(loss.item()):
            raise TrainingError(f"non-finite loss in domain {self.domain} at epoch {epoch} step {step}",
                                self.diagnostics(epoch, step, values))
        tape.backward(loss)
        try:
            self.optim.step()
        except FloatingPointError as exc:
            raise TrainingError(str(exc), self.diagnostics(epoch, step, values)) from exc
        return values

    def diagnostics(self, epoch: int, step: int, values: StepLosses) -> dict:
        return {
            "domain": self.domain, "epoch": epoch, "step": step,
            "losses": {"prd": values.prd, "intra": values.intra, "inter": values.inter},
            "tau": self.model.temperature.value,
            "param_abs_max": {p.name: float(np.max(np.abs(p.data))) for p in self.model.parameters()},
            "grad_finite": {p.name: bool(np.all(np.isfinite(p.grad))) for p in self.model.parameters()},
        }


def combine_losses(la: StepLosses, lb: StepLosses, cfg: TrainConfig) -> dict:
    """Joint scalars of one step. Each side computes the inter term with its own
    temperature; the reported value is their mean."""
    l_c = 0.0
    if cfg.uses("intra"):
        l_c += la.intra + lb.intra
    if cfg.uses("inter"):
        l_c += 0.5 * (la.inter + lb.inter)
    return {"L_prd_A": la.prd, "L_prd_B": lb.prd, "L_C": l_c, "L": la.prd + lb.prd + cfg.alpha * l_c}


def train_step(a: DomainTrainer, b: DomainTrainer, epoch: int, step: int, batches=(None, None)) -> dict:
    """One synchronous step of both domains in the calling thread.

    Bundles still go through the wire encoding so results match the
    transport-based workers bit for bit.
    """
    qa = a.forward(epoch, step, batches[0])
    qb = b.forward(epoch, step, batches[1])
    from_b, from_a = decode_bundle(encode_bundle(qb)), decode_bundle(encode_bundle(qa))
    return combine_losses(a.finish(from_b), b.finish(from_a), a.cfg)


def steps_per_epoch(data: PreparedData, cfg: TrainConfig) -> int:
    rows = [data[d].split.train.n_interactions * (1 + cfg.neg_ratio) for d in DOMAINS]
    return max(math.ceil(r / cfg.batch_size) for r in rows)


class EarlyStopper:
    """Tracks the best value seen; ``update`` returns ``(is_best, stop)``."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = None
        self.bad = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        if value > self.best:
            self.best, self.best_epoch, self.bad = value, epoch, 0
            return True, False
        self.bad += 1
        return False, self.bad >= self.patience


# -- workers ------------------------------------------------------------------------

def _mean_losses(losses: list[StepLosses]) -> StepLosses:
    return StepLosses(*(float(np.mean([getattr(x, f) for x in losses])) for f in ("prd", "intra", "inter")))


def domain_worker(part: PreparedDomain, cfg: TrainConfig, eval_seed: int, steps: int, transport, control) -> None:
    """Train one domain, exchanging bundles over ``transport`` and taking orders over ``control``."""
    try:
        trainer = DomainTrainer(part, cfg, eval_seed)
        control.send(("epoch", 0, None, trainer.evaluate()))
        best, epoch = None, 0
        while True:
            order, is_best = control.recv()
            if is_best:
                best = trainer.model.state_dict()
            if order == "stop":
                break
            epoch += 1
            trainer.begin_epoch(epoch)
            losses = []
            for step in range(steps):
                peer = exchange_session(trainer.forward(epoch, step), transport)
                losses.append(trainer.finish(peer))
            control.send(("epoch", epoch, _mean_losses(losses), trainer.evaluate()))
        control.send(("final", best, transport.digest, bytes(transport.transcript) if transport.record else None))
    except BaseException as exc:  # report, then unblock the peer
        dump = exc.dump if isinstance(exc, TrainingError) else {}
        try:
            control.send(("error", traceback.format_exc(), dump))
        finally:
            transport.close()


def _socket_worker(part, cfg, eval_seed, steps, control, record):
    """Process entry point: B listens and reports its port, A connects to it."""
    if part.domain == "B":
        server = SocketTransport.listen()
        control.send(("port", server.getsockname()[1]))
        transport = SocketTransport.accept(server, record=record)
        server.close()
    else:
        _, port = control.recv()
        transport = SocketTransport.connect("127.0.0.1", port, record=record)
    try:
        domain_worker(part, cfg, eval_seed, steps, transport, control)
    finally:
        transport.close()


def _recv(conn, worker, timeout: float = 3600.0):
    deadline = time.monotonic() + timeout
    while not conn.poll(0.2):
        if not worker.is_alive() and not conn.poll(0):
            raise TrainingError(f"worker {worker.name} exited without reporting")
        if time.monotonic() > deadline:
            raise TrainingError(f"worker {worker.name} timed out")
    return conn.recv()


@dataclass(eq=False)
class TrainReport:
    config: TrainConfig
    config_hash: str
    seed: int
    epochs: list[dict]
    best_epoch: int
    best_metrics: dict[str, MetricsSummary]
    states: dict[str, dict]
    transcript_digest: dict[str, str]
    transcripts: dict[str, bytes | None]
    steps_per_epoch: int
    transport: str
    wall_clock: float = 0.0
    stopped_early: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def mean_hr(self) -> float:
        return float(np.mean([s.hr for s in self.best_metrics.values()]))

    def metrics_document(self) -> str:
        return metrics_document(self.best_metrics, self.seed, self.config_hash, self.config.lambda_used)

    def log_lines(self) -> list[str]:
        return [json.dumps(e, sort_keys=True) for e in self.epochs]

    def save(self, directory) -> Path:
        """Per-domain checkpoints, the epoch log, the metrics document and a run summary."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for d, state in self.states.items():
            save_checkpoint(directory / f"model_{d}.p2ck", state)
        (directory / "train_log.jsonl").write_text("\n".join(self.log_lines()) + "\n", encoding="utf-8")
        (directory / "metrics.ini").write_text(self.metrics_document(), encoding="utf-8")
        summary = {"best_epoch": self.best_epoch, "epochs_run": len(self.epochs) - 1,
                   "stopped_early": self.stopped_early, "steps_per_epoch": self.steps_per_epoch,
                   "transport": self.transport, "wall_clock_s": self.wall_clock,
                   "transcript_sha256": self.transcript_digest, "config_hash": self.config_hash,
                   "config": self.config.as_dict(), **self.extra}
        (directory / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return directory


def _epoch_record(epoch: int, msgs: dict, cfg: TrainConfig) -> dict:
    rec = {"epoch": epoch}
    if msgs["A"][2] is not None:
        rec.update(combine_losses(msgs["A"][2], msgs["B"][2], cfg))
    for d in DOMAINS:
        s = msgs[d][3]
        rec[f"HR_{d}"], rec[f"NDCG_{d}"] = s.hr, s.ndcg
    return rec


def fit(data: PreparedData, cfg: TrainConfig, transport: str = "inproc", record_transcript: bool = False,
        log: Callable[[str], None] | None = None) -> TrainReport:
    """Train both domains with early stopping on mean HR@K; keep the best epoch.

    Epoch 0 is the untrained evaluation. Early stopping looks at epochs >= 1
    only, so with ``epochs >= 1`` the best checkpoint is a trained one.
    """
    if transport not in ("inproc", "socket"):
        raise ValueError(f"unknown transport {transport!r}; expected inproc or socket")
    start = time.perf_counter()
    steps = steps_per_epoch(data, cfg)
    workers, conns = _launch(data, cfg, steps, transport, record_transcript)
    stopper = EarlyStopper(cfg.patience)
    epochs, best_metrics, best_epoch, stopped_early = [], {}, 0, False
    try:
        while True:
            msgs = {d: _recv(conns[d], workers[d]) for d in DOMAINS}
            _raise_errors(msgs)
            epoch = msgs["A"][1]
            rec = _epoch_record(epoch, msgs, cfg)
            epochs.append(rec)
            if log is not None:
                log(json.dumps(rec, sort_keys=True))
            if epoch == 0:
                is_best, stop = True, cfg.epochs == 0
            else:
                is_best, stop = stopper.update(epoch, float(np.mean([msgs[d][3].hr for d in DOMAINS])))
                stopped_early = stop and epoch < cfg.epochs
                stop = stop or epoch >= cfg.epochs
            if is_best:
                best_epoch, best_metrics = epoch, {d: msgs[d][3] for d in DOMAINS}
            for d in DOMAINS:
                conns[d].send(("stop" if stop else "continue", is_best))
            if stop:
                break
        finals = {d: _recv(conns[d], workers[d]) for d in DOMAINS}
        _raise_errors(finals)
    finally:
        for w in workers.values():
            w.join(timeout=30)
            if isinstance(w, mp.process.BaseProcess) and w.is_alive():
                w.terminate()
    return TrainReport(
        config=cfg, config_hash=run_hash(cfg, data), seed=cfg.seed, epochs=epochs, best_epoch=best_epoch,
        best_metrics=best_metrics, states={d: finals[d][1] for d in DOMAINS},
        transcript_digest={d: finals[d][2] for d in DOMAINS}, transcripts={d: finals[d][3] for d in DOMAINS},
        steps_per_epoch=steps, transport=transport, wall_clock=time.perf_counter() - start,
        stopped_early=stopped_early,
    )


def _raise_errors(msgs: dict) -> None:
    errors = [m for m in msgs.values() if m[0] == "error"]
    if errors:
        # prefer the root cause over the peer's "disconnected" echo
        errors.sort(key=lambda m: "disconnected" in m[1])
        raise TrainingError(f"training worker failed:\n{errors[0][1]}", errors[0][2])


def _launch(data: PreparedData, cfg: TrainConfig, steps: int, transport: str, record: bool):
    workers, conns = {}, {}
    if transport == "inproc":
        ta, tb = InProcessTransport.pair(timeout=3600.0, record=record)
        for d, t in zip(DOMAINS, (ta, tb)):
            parent, child = mp.Pipe()
            w = threading.Thread(target=domain_worker, args=(data[d], cfg, data.seed, steps, t, child),
                                 name=f"domain-{d}", daemon=True)
            workers[d], conns[d] = w, parent
            w.start()
        return workers, conns
    ctx = mp.get_context("spawn")
    for d in ("B", "A"):
        parent, child = ctx.Pipe()
        w = ctx.Process(target=_socket_worker, args=(data[d], cfg, data.seed, steps, child, record),
                        name=f"domain-{d}", daemon=True)
        workers[d], conns[d] = w, parent
        w.start()
    port_msg = _recv(conns["B"], workers["B"], timeout=120)
    if port_msg[0] != "port":
        _raise_errors({"B": port_msg})
    conns["A"].send(port_msg)
    return workers, conns


def load_runtime(part: PreparedDomain, cfg: TrainConfig, state: dict, eval_seed: int = 0) -> DomainRuntime:
    rt = DomainRuntime(part, cfg, eval_seed)
    rt.model.load_state_dict(state)
    return rt
