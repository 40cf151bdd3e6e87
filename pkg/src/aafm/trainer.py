"""Alternating normal / adversarial training of the factorization machine.

Each epoch makes one pass minimizing the plain loss, then one pass
minimizing ``loss(clean) + lambda_k * loss(perturbed) (+ decay)`` where the
perturbation is rebuilt for every batch from that batch's fresh gradients.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import adversary, evaluation, fm
from .adversary import AdversaryConfig
from .errors import ConfigError, NumericalError
from .optim import make_optimizer

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    embedding_dim: int = 16
    init_std: float = 0.01
    weight_init_std: float = 0.01
    negative_ratio: int = 4
    schedule: str = "epoch"
    # one set of optimizer moments per pass, or a single set shared by both
    shared_optimizer_state: bool = False
    checkpoint_every: int = 0
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)

    def __post_init__(self):
        if isinstance(self.adversary, dict):
            self.adversary = AdversaryConfig(**self.adversary)
        self.adam_betas = tuple(self.adam_betas)
        for name in ("epochs", "batch_size", "embedding_dim", "negative_ratio"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.schedule not in ("epoch", "batch"):
            raise ConfigError(f"schedule must be 'epoch' or 'batch', got {self.schedule!r}")

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class EpochRecord:
    epoch: int
    tau: int
    normal_loss: float
    adv_clean_loss: float
    adv_loss: float
    decay_loss: float
    omega_norm: float
    val_auc: float
    val_logloss: float
    ascent_fraction: float
    fgsm_norm_err: float
    normal_batches: int
    adv_batches: int
    wall_clock: float = 0.0

    # excluded from the deterministic log
    TIMING = ("wall_clock",)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def columns(self):
        return [f.name for f in fields(EpochRecord) if f.name not in EpochRecord.TIMING]

    def to_tsv(self, preamble=()):
        cols = self.columns()
        lines = [f"# {p}" for p in preamble]
        lines.append("\t".join(cols))
        for r in self.records:
            lines.append("\t".join(_fmt(getattr(r, c)) for c in cols))
        return "\n".join(lines) + "\n"

    def timing_tsv(self):
        lines = ["epoch\twall_clock_s"]
        lines += [f"{r.epoch}\t{r.wall_clock:.3f}" for r in self.records]
        return "\n".join(lines) + "\n"

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(float(f"{v:.12g}"))
    return str(v)


@dataclass
class TrainResult:
    params: fm.ModelParams
    state: adversary.AdversaryState
    log: TrainLog
    diagnostics: list


def evaluate_epoch(params, test, stats=None):
    """Validation AUC and logloss on the held-out table; pure."""
    scores = fm.predict(params, test.values)
    return evaluation.auc(scores, test.labels), evaluation.logloss(scores, test.labels)


class Trainer:
    def __init__(self, data, stats, config, checkpoint_dir=None, header=None):
        self.data = data
        self.stats = stats
        self.config = config
        self.adv = config.adversary
        self.checkpoint_dir = checkpoint_dir
        self.header = dict(header or {})
        schema = data.schema
        self.params = fm.init_params(schema, config.embedding_dim, config.seed, config.init_std,
                                     config.weight_init_std)
        joint_alpha, _ = stats.joint(data.train.values)
        self.state = adversary.init_state(schema.n_domains, joint_alpha)
        self.lam = adversary.reweight_lambda(joint_alpha, self.state, self.adv)
        self.beta = stats.lookup(data.train.values)[1] if self.adv.adaptive_epsilon else None
        passes = ("shared",) if config.shared_optimizer_state else ("normal", "adversarial")
        self.optimizers = {
            name: make_optimizer(config.optimizer, config.learning_rate, config.adam_betas, config.adam_eps)
            for name in passes
        }
        self.epoch = 0
        self.log = TrainLog()
        self.diagnostics = []
        self._last_good = None

    # -- parameter plumbing ---------------------------------------------------

    def _named(self):
        named = {f"emb{d}": t for d, t in enumerate(self.params.embeddings)}
        named["w"] = self.params.w
        named["v"] = self.params.v
        named["omega"] = self.state.omega
        return named

    def _optimizer(self, pass_name):
        return self.optimizers.get(pass_name) or self.optimizers["shared"]

    def _apply(self, grads, d_omega=None, pass_name="normal"):
        named = self._named()
        update = {}
        for d, (rows, g) in enumerate(zip(grads.rows, grads.row_grads)):
            dense = np.zeros_like(named[f"emb{d}"])
            dense[rows] = g
            update[f"emb{d}"] = dense
        update["w"] = grads.w
        update["v"] = grads.v
        if d_omega is not None:
            update["omega"] = d_omega
        self._optimizer(pass_name).step(named, update)

    # -- steps ------------------------------------------------------------------

    def normal_step(self, idx):
        values, labels = self.data.train.values[idx], self.data.train.labels[idx]
        trace = fm.forward(self.params, values)
        loss = fm.loss(trace, labels)
        if not math.isfinite(loss):
            raise NumericalError("non-finite normal loss")
        self._apply(fm.backward(trace, labels, self.params))
        return loss

    def adversarial_step(self, idx):
        """One step on the combined objective; returns (clean, adversarial, norm error)."""
        values, labels = self.data.train.values[idx], self.data.train.labels[idx]
        b = len(idx)
        trace = fm.forward(self.params, values)
        clean = fm.bce(trace.yhat, labels)
        grads = fm.backward(trace, labels, self.params)
        if not self.adv.active:
            self._apply(grads, pass_name="adversarial")
            return float(clean.mean()), float(clean.mean()), 0.0

        unit, live = adversary.fgsm_direction(trace, labels, self.params)
        eps = adversary.epsilon_for(values, self.stats, self.state, self.adv)
        delta = eps[:, :, None] * unit
        norm_err = float(np.max(np.abs(np.linalg.norm(delta, axis=2) - np.where(live, eps, 0.0))))
        perturbed = fm.forward(self.params, values, delta)
        adv_loss = fm.bce(perturbed.yhat, labels)
        lam = self.lam[idx]
        adv_grads = fm.backward(perturbed, labels, self.params, weights=lam / b)

        d_omega = None
        if self.adv.adaptive_epsilon:
            d_omega = adversary.omega_gradient(adv_grads.d_e, unit, self.beta[idx], self.state.omega)
            if self.adv.decay:
                d_omega = d_omega + adversary.decay_gradient(self.state, self.adv)
        objective = clean.mean() + np.mean(lam * adv_loss) + adversary.decay_loss(self.state, self.adv)
        if not math.isfinite(objective):
            raise NumericalError("non-finite adversarial objective")
        self._apply(grads.add(adv_grads), d_omega, pass_name="adversarial")
        return float(clean.mean()), float(adv_loss.mean()), norm_err

    # -- epochs -----------------------------------------------------------------

    def _batches(self, epoch, pass_id):
        n = len(self.data.train)
        rng = np.random.default_rng([self.config.seed, epoch, pass_id])
        perm = rng.permutation(n)
        bs = self.config.batch_size
        return [perm[s:s + bs] for s in range(0, n, bs)]

    def run_epoch(self, epoch):
        start = time.perf_counter()
        self.state.tau = epoch
        normal, clean, adv, errs, ascents = [], [], [], [], 0
        batch = 0
        try:
            if self.config.schedule == "epoch":
                for batch, idx in enumerate(self._batches(epoch, 0)):
                    normal.append(self.normal_step(idx))
                for batch, idx in enumerate(self._batches(epoch, 1)):
                    c, a, e = self.adversarial_step(idx)
                    clean.append(c)
                    adv.append(a)
                    errs.append(e)
                    ascents += a >= c
            else:
                for batch, idx in enumerate(self._batches(epoch, 0)):
                    normal.append(self.normal_step(idx))
                    c, a, e = self.adversarial_step(idx)
                    clean.append(c)
                    adv.append(a)
                    errs.append(e)
                    ascents += a >= c
        except NumericalError as exc:
            exc.epoch, exc.batch = epoch, batch
            self._abort(exc)
            raise
        self.params.check_finite()
        val_auc, val_ll = evaluate_epoch(self.params, self.data.test, self.stats)
        rec = EpochRecord(
            epoch=epoch,
            tau=self.state.tau,
            normal_loss=float(np.mean(normal)),
            adv_clean_loss=float(np.mean(clean)),
            adv_loss=float(np.mean(adv)),
            decay_loss=float(adversary.decay_loss(self.state, self.adv)),
            omega_norm=float(np.linalg.norm(self.state.omega)),
            val_auc=val_auc,
            val_logloss=val_ll,
            ascent_fraction=ascents / max(1, len(adv)),
            fgsm_norm_err=float(max(errs)) if errs else 0.0,
            normal_batches=len(normal),
            adv_batches=len(adv),
            wall_clock=time.perf_counter() - start,
        )
        self.log.records.append(rec)
        self.diagnostics.extend(self._diagnostic_rows(epoch, rec.decay_loss))
        self.epoch = epoch
        self._last_good = (self.params.copy(), self.state.omega.copy())
        logger.info("epoch %d: normal %.4f adv %.4f auc %.4f (%.1fs)",
                    epoch, rec.normal_loss, rec.adv_loss, val_auc, rec.wall_clock)
        if self.checkpoint_dir and self.config.checkpoint_every and epoch % self.config.checkpoint_every == 0:
            self.save(self.checkpoint_dir / f"epoch_{epoch:03d}.ckpt")
        return rec

    def _diagnostic_rows(self, epoch, decay):
        values = self.data.train.values
        eps = adversary.epsilon_for(values, self.stats, self.state, self.adv)
        q = np.quantile(self.lam, [0.0, 0.25, 0.5, 0.75, 1.0])
        rows = []
        for d, name in enumerate(self.data.schema.names):
            rows.append((epoch, name, float(eps[:, d].mean()), float(eps[:, d].max()),
                         float(self.state.omega[d]), *map(float, q), decay))
        return rows

    def run(self):
        for epoch in range(self.epoch + 1, self.config.epochs + 1):
            self.run_epoch(epoch)
        return TrainResult(self.params, self.state, self.log, self.diagnostics)

    # -- persistence --------------------------------------------------------------

    def _abort(self, exc):
        logger.error("training aborted at epoch %s batch %s: %s", exc.epoch, exc.batch, exc)
        if self.checkpoint_dir and self._last_good is not None:
            params, omega = self._last_good
            fm.save_checkpoint(self.checkpoint_dir / "last_finite.ckpt", params, self.data.schema,
                               {**self.header, "epoch": self.epoch, "tau": self.epoch},
                               {"omega": omega})

    def save(self, path):
        header = dict(self.header)
        header.update({
            "epoch": self.epoch,
            "tau": self.state.tau,
            "optimizer": {name: opt.header() for name, opt in self.optimizers.items()},
            "log": [asdict(r) | {"wall_clock": 0.0} for r in self.log.records],
        })
        extra = {"omega": self.state.omega}
        for name, opt in self.optimizers.items():
            extra.update({f"opt.{name}.{k}": a for k, a in opt.state_arrays().items()})
        fm.save_checkpoint(path, self.params, self.data.schema, header, extra)

    def restore(self, path):
        params, header, extra = fm.load_checkpoint(path, self.data.schema)
        self.params = params
        self.state.omega = np.array(extra["omega"])
        self.state.tau = header["tau"]
        self.epoch = header["epoch"]
        if set(header["optimizer"]) != set(self.optimizers):
            raise ConfigError("checkpoint optimizer layout does not match shared_optimizer_state")
        for name, opt in self.optimizers.items():
            prefix = f"opt.{name}."
            opt.load(header["optimizer"][name],
                     {k[len(prefix):]: a for k, a in extra.items() if k.startswith(prefix)})
        self.log = TrainLog([EpochRecord(**r) for r in header.get("log", [])])


def train(data, stats, config, checkpoint_dir=None, header=None, resume_from=None):
    """Train a model; returns a :class:`TrainResult`."""
    trainer = Trainer(data, stats, config, checkpoint_dir, header)
    if resume_from is not None:
        trainer.restore(resume_from)
    return trainer.run()
