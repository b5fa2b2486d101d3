"""Training loops: masked-value pretraining, supervised training, fine-tuning.

Randomness is derived per epoch from ``(seed, epoch, purpose)`` with the
pinned Philox generator, and masks from ``(mask seed, epoch, sample index)``.
A run resumed from the end-of-epoch checkpoint therefore replays exactly the
same batches, masks and dropout draws as the uninterrupted run.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError
from .data import Dataset, NormStats, compute_norm_stats, iter_batches, normalize_dataset
from .masking import MaskSpec, make_rng, sample_mask
from .metrics import accuracy, rmse
from .model import ModelConfig, TSTModel, encode, head_predict
from .tensor import Tensor

log = logging.getLogger(__name__)

# mask stream key for validation/evaluation masks: fixed across epochs
EVAL_MASK_EPOCH = 2**32 - 1

OBJECTIVES = {"reconstruction": "masked_mse", "regression": "squared_error", "classification": "cross_entropy"}


class NumericError(RuntimeError):
    """Loss became NaN or infinite."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 0  # 0 disables early stopping
    freeze_all_but_head: bool = False
    objective: str = ""  # empty -> derived from the model head
    warmup_epochs: int = 0
    norm_mode: str = "stddev"
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.objective and self.objective not in OBJECTIVES.values():
            raise ValueError(f"objective must be one of {sorted(OBJECTIVES.values())}, got {self.objective!r}")


# -- optimizer -------------------------------------------------------------------------
def adam_step(params: list[np.ndarray], grads: list[np.ndarray | None], state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction.

    ``state`` holds ``t`` (step count) and lists ``m``/``v`` parallel to ``params``;
    they are created on the first call.
    """
    if "m" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, named_params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.names = list(named_params)
        self.params = [named_params[n] for n in self.names]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict = {}

    def step(self, lr: float | None = None) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr if lr is None else lr, self.beta1, self.beta2, self.eps)

    def state_dict(self) -> dict | None:
        if "m" not in self.state:
            return None
        return {"t": self.state["t"],
                "m": {n: a.copy() for n, a in zip(self.names, self.state["m"])},
                "v": {n: a.copy() for n, a in zip(self.names, self.state["v"])}}

    def load_state_dict(self, state: dict | None) -> None:
        if state is None:
            self.state = {}
            return
        missing = [n for n in self.names if n not in state["m"]]
        if missing:
            raise CheckpointError(f"optimizer state lacks moments for {missing}")
        self.state = {"t": int(state["t"]),
                      "m": [np.array(state["m"][n]) for n in self.names],
                      "v": [np.array(state["v"][n]) for n in self.names]}


# -- losses ---------------------------------------------------------------------------------
def masked_mse_loss(x_hat: Tensor, x: np.ndarray, keep: np.ndarray, lengths) -> Tensor | None:
    """Mean squared error over hidden (``keep == False``), non-padded cells.

    Each sample's loss is averaged over its own hidden cells, then samples are
    averaged.  Samples with no hidden cell are skipped; returns None if no
    sample remains.
    """
    B, w, m = x_hat.shape
    valid = np.arange(w)[None, :] < np.asarray(lengths)[:, None]
    target = ~keep & valid[:, :, None]
    counts = target.sum(axis=(1, 2))
    used = counts > 0
    if not used.all():
        log.warning("%d sample(s) without any masked value skipped in the loss", int((~used).sum()))
    if not used.any():
        return None
    idx = np.nonzero(target)
    weights = (1.0 / (counts[idx[0]] * used.sum())).astype(x_hat.dtype)
    diff = T.getitem(x_hat, idx) - Tensor(x[idx].astype(x_hat.dtype))
    return T.tsum(T.square(diff) * Tensor(weights))


def supervised_loss(y_hat: Tensor, y, task: str) -> Tensor:
    """Batch mean of squared error norms (regression) or softmax cross-entropy (classification)."""
    B = y_hat.shape[0]
    if task == "regression":
        target = Tensor(np.asarray(y, dtype=y_hat.dtype).reshape(y_hat.shape))
        return T.tsum(T.square(y_hat - target)) * (1.0 / B)
    if task == "classification":
        labels = np.asarray(y, dtype=np.int64).ravel()
        onehot = np.zeros(y_hat.shape, dtype=y_hat.dtype)
        onehot[np.arange(B), labels] = 1.0
        return -T.tsum(T.log_softmax_last_dim(y_hat) * Tensor(onehot)) * (1.0 / B)
    raise ValueError(f"unknown supervised task {task!r}")


def _check_finite(loss: Tensor, epoch: int) -> None:
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss at epoch {epoch}")


# -- batches with masks --------------------------------------------------------------------
def batch_masks(batch, spec: MaskSpec, epoch: int) -> np.ndarray:
    """Keep-mask (B, w, m) with a fresh mask over each sample's real length."""
    B, w, m = batch.x.shape
    keep = np.ones((B, w, m), dtype=bool)
    for row, (idx, n) in enumerate(zip(batch.indices, batch.lengths)):
        keep[row, :n] = sample_mask(int(n), m, spec, epoch, int(idx)).bits
    return keep


def _labels_array(labels, task):
    if task == "classification":
        return np.asarray(labels, dtype=np.int64)
    return np.stack([np.asarray(l, dtype=np.float64).ravel() for l in labels])


# -- evaluation ---------------------------------------------------------------------------------
@dataclass
class MetricsReport:
    task: str
    metrics: dict[str, float]
    predictions: list | None = None


def _predict(model: TSTModel, batch, frozen_x=None):
    with T.no_grad():
        return model(batch.x if frozen_x is None else frozen_x, batch.lengths, training=False)


def evaluate(model: TSTModel, dataset: Dataset, task: str | None = None, mask_spec: MaskSpec | None = None,
             batch_size: int = 256, dump: bool = False) -> MetricsReport:
    """Metrics of ``model`` on an already-normalized ``dataset``.

    regression -> rmse and loss; classification -> accuracy and loss;
    reconstruction -> masked_mse (the training loss), masked_rmse (pooled over
    all hidden cells).  Reconstruction masks are fixed per sample so repeated
    evaluations are comparable.
    """
    c = model.config
    task = task or c.head
    dtype = c.np_dtype
    preds, truths, losses, dumps = [], [], [], []
    sq_sum, n_cells = 0.0, 0
    if task != "reconstruction":
        dataset = dataset.labeled()
    for batch in iter_batches(dataset, batch_size, c.w, dtype=dtype):
        B = batch.x.shape[0]
        if task == "reconstruction":
            spec = mask_spec or MaskSpec()
            keep = batch_masks(batch, spec, EVAL_MASK_EPOCH)
            x_in = np.where(keep, batch.x, 0).astype(dtype)
            out = _predict(model, batch, x_in)
            loss = masked_mse_loss(out, batch.x, keep, batch.lengths)
            if loss is not None:
                losses.append((loss.item(), B))
            target = ~keep & batch.valid[:, :, None]
            sq_sum += float(((out.data.astype(np.float64) - batch.x) ** 2)[target].sum())
            n_cells += int(target.sum())
            if dump:
                for row in range(B):
                    n = batch.lengths[row]
                    dumps.append({"id": batch.ids[row], "truth": batch.x[row, :n].tolist(),
                                  "keep": keep[row, :n].astype(int).tolist(),
                                  "prediction": out.data[row, :n].astype(np.float64).tolist()})
            continue
        y = _labels_array(batch.labels, task)
        out = _predict(model, batch)
        losses.append((supervised_loss(out, y, task).item(), B))
        if task == "classification":
            preds.append(out.data.argmax(axis=1))
            truths.append(y)
        else:
            preds.append(out.data.astype(np.float64))
            truths.append(y)
        if dump:
            for row in range(B):
                dumps.append({"id": batch.ids[row], "truth": np.ravel(y[row]).tolist(),
                              "prediction": np.ravel(preds[-1][row]).tolist()})
    total = sum(b for _, b in losses)
    metrics = {"loss": sum(v * b for v, b in losses) / total if total else float("nan")}
    if task == "reconstruction":
        metrics["masked_mse"] = metrics["loss"]
        metrics["masked_rmse"] = float(np.sqrt(sq_sum / n_cells)) if n_cells else float("nan")
    elif task == "classification":
        metrics["accuracy"] = accuracy(np.concatenate(preds), np.concatenate(truths))
    else:
        metrics["rmse"] = rmse(np.concatenate(preds), np.concatenate(truths))
    return MetricsReport(task, metrics, dumps if dump else None)


def _score(task: str, metrics: dict) -> tuple:
    """Sort key, lower is better."""
    if task == "classification":
        return (-metrics["accuracy"], metrics["loss"])
    if task == "regression":
        return (metrics["rmse"],)
    return (metrics["masked_mse"],)


# -- fitting ----------------------------------------------------------------------------------------
@dataclass
class FitResult:
    best: Checkpoint
    last: Checkpoint
    history: list[dict] = field(default_factory=list)

    def model(self, which: str = "best") -> TSTModel:
        return (self.best if which == "best" else self.last).build_model()

    def losses(self, split: str = "train") -> list[float]:
        return [r["value"] for r in self.history if r["split"] == split and r["metric"] == "loss"]


def _fit(model: TSTModel, train: Dataset, val: Dataset | None, cfg: TrainConfig, norm: NormStats,
         mask_spec: MaskSpec | None, resume: Checkpoint | None, on_record) -> FitResult:
    c = model.config
    task = c.head
    dtype = c.np_dtype
    frozen = cfg.freeze_all_but_head
    trainable = model.head_names() if frozen else list(model.params)
    if frozen:
        for n in model.encoder_names():
            model.params[n].requires_grad = False
    opt = Adam({n: model.params[n] for n in trainable}, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    history: list[dict] = []
    best_score = None
    best_epoch = -1
    bad_epochs = 0
    best_params = None
    start = 0
    if resume is not None:
        model.load_state_dict(resume.params)
        opt.load_state_dict(resume.optimizer)
        start = resume.epoch
        ts = resume.train_state
        history = list(ts.get("history", []))
        best_score = tuple(ts["best_score"]) if ts.get("best_score") is not None else None
        best_epoch = ts.get("best_epoch", -1)
        bad_epochs = ts.get("bad_epochs", 0)
        best_params = resume.best_params

    def record(epoch, split, metric, value):
        rec = {"epoch": epoch, "split": split, "metric": metric, "value": float(value)}
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    def snapshot(params, epoch, with_state: bool) -> Checkpoint:
        state = {
            "task": task,
            "best_score": list(best_score) if best_score is not None else None,
            "best_epoch": best_epoch,
            "bad_epochs": bad_epochs,
            "history": list(history),
            "train_config": asdict(cfg),
            "mask_spec": asdict(mask_spec) if mask_spec is not None else None,
        }
        return Checkpoint(c, params, norm, opt.state_dict() if with_state else None,
                          {"algorithm": "philox", "seed": cfg.seed, "next_epoch": epoch}, epoch, state,
                          best_params if with_state else None)

    epoch = start
    for epoch in range(start, cfg.epochs):
        shuffle_rng = make_rng(cfg.seed, epoch, 1)
        drop_rng = make_rng(cfg.seed, epoch, 2)
        lr = cfg.lr * min(1.0, (epoch + 1) / cfg.warmup_epochs) if cfg.warmup_epochs else cfg.lr
        total, count = 0.0, 0
        for batch in iter_batches(train, cfg.batch_size, c.w, shuffle_rng, dtype=dtype):
            B = batch.x.shape[0]
            if task == "reconstruction":
                keep = batch_masks(batch, mask_spec, epoch)
                x_in = np.where(keep, batch.x, 0).astype(dtype)
                out = model(x_in, batch.lengths, training=True, rng=drop_rng)
                loss = masked_mse_loss(out, batch.x, keep, batch.lengths)
                if loss is None:
                    continue
            else:
                y = _labels_array(batch.labels, task)
                if frozen:
                    # static representations: encoder in eval mode, no graph through it
                    with T.no_grad():
                        z, out_lengths = encode(batch.x, batch.lengths, model, training=False)
                    out = head_predict(z, out_lengths, model)
                else:
                    out = model(batch.x, batch.lengths, training=True, rng=drop_rng)
                loss = supervised_loss(out, y, task)
            _check_finite(loss, epoch)
            model.zero_grad()
            T.backward(loss)
            opt.step(lr)
            total += loss.item() * B
            count += B
        if count:
            record(epoch + 1, "train", "loss", total / count)

        eval_set = val if val is not None and len(val) else None
        if eval_set is not None:
            report = evaluate(model, eval_set, task, mask_spec, cfg.eval_batch_size)
            for k, v in report.metrics.items():
                record(epoch + 1, "val", k, v)
            score = _score(task, report.metrics)
        else:
            score = (total / count,) if count else (float("inf"),)
        if best_score is None or score < best_score:
            best_score, best_epoch, bad_epochs = score, epoch + 1, 0
            best_params = model.state_dict()
        else:
            bad_epochs += 1
        if cfg.patience and bad_epochs >= cfg.patience:
            log.info("early stopping after epoch %d (best epoch %d)", epoch + 1, best_epoch)
            epoch += 1
            break
    else:
        epoch = max(cfg.epochs, start)

    for n in model.encoder_names():
        model.params[n].requires_grad = True
    last = snapshot(model.state_dict(), epoch, True)
    best = snapshot(best_params if best_params is not None else model.state_dict(), best_epoch, False)
    return FitResult(best, last, history)


# -- public entry points ----------------------------------------------------------------------------
def _prepare(dataset: Dataset, norm: NormStats | None, cfg: TrainConfig) -> tuple[Dataset, NormStats]:
    if norm is None:
        norm = compute_norm_stats(dataset, cfg.norm_mode)
    return normalize_dataset(dataset, norm), norm


def pretrain(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, mask_spec: MaskSpec | None = None,
             val: Dataset | None = None, norm: NormStats | None = None, resume: Checkpoint | None = None,
             on_record=None) -> FitResult:
    """Masked-value denoising on raw (unnormalized) ``dataset``; labels are never read.

    Normalization statistics come from ``dataset`` unless ``norm`` is given.
    The best checkpoint is chosen by validation masked MSE, or by training
    loss when no validation set is supplied.
    """
    if model_cfg.head != "reconstruction":
        raise ValueError("pretraining needs a model with a reconstruction head")
    mask_spec = mask_spec or MaskSpec(seed=train_cfg.seed)
    if resume is not None and resume.norm is not None:
        norm = resume.norm
    train_n, norm = _prepare(dataset.without_labels(), norm, train_cfg)
    val_n = normalize_dataset(val.without_labels(), norm) if val is not None else None
    model = TSTModel(model_cfg, seed=train_cfg.seed)
    return _fit(model, train_n, val_n, train_cfg, norm, mask_spec, resume, on_record)


def train_supervised(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                     init: Checkpoint | None = None, val: Dataset | None = None, norm: NormStats | None = None,
                     resume: Checkpoint | None = None, on_record=None) -> FitResult:
    """Supervised training from scratch (``init=None``) or fine-tuning from a checkpoint.

    When fine-tuning, encoder weights and normalization statistics come from
    ``init`` and the head is freshly initialized for ``model_cfg``.  Only
    labelled samples are used.
    """
    if model_cfg.head not in ("regression", "classification"):
        raise ValueError("supervised training needs a regression or classification head")
    model = TSTModel(model_cfg, seed=train_cfg.seed)
    if init is not None:
        if init.model_config.encoder_signature() != model_cfg.encoder_signature():
            mine, theirs = model_cfg.encoder_signature(), init.model_config.encoder_signature()
            diff = sorted(k for k in mine if mine[k] != theirs.get(k))
            raise CheckpointError(f"checkpoint encoder is incompatible with the model config (fields {diff})")
        model.load_state_dict(init.params, encoder_only=True)
        norm = init.norm if init.norm is not None else norm
    if resume is not None and resume.norm is not None:
        norm = resume.norm
    train_n, norm = _prepare(dataset, norm, train_cfg)
    train_n = train_n.labeled()
    val_n = normalize_dataset(val, norm).labeled() if val is not None else None
    return _fit(model, train_n, val_n, train_cfg, norm, None, resume, on_record)


def model_for_task(base: ModelConfig, head: str, n_out: int = 0) -> ModelConfig:
    return replace(base, head=head, n_out=n_out if head != "reconstruction" else 0)


# -- imputation ---------------------------------------------------------------------------------------
@dataclass
class ImputationResult:
    records: list[dict]
    masked_rmse: float | None
    n_masked: int


def impute(model: TSTModel, dataset: Dataset, norm: NormStats, mask_spec: MaskSpec | None = None,
           use_missing: bool = False, batch_size: int = 256) -> ImputationResult:
    """Fill hidden values of raw ``dataset`` with the reconstruction head.

    Hidden cells come from ``mask_spec`` (evaluation stream) or, with
    ``use_missing``, from the positions recorded as missing at ingestion.
    Records and the aggregate RMSE are in original units; the RMSE is None
    when hiding real missing values, whose truth is unknown.
    """
    if model.config.head != "reconstruction":
        raise ValueError("imputation needs a model with a reconstruction head")
    c = model.config
    data_n = normalize_dataset(dataset, norm)
    records, sq, n_cells = [], 0.0, 0
    for batch in iter_batches(data_n, batch_size, c.w, dtype=c.np_dtype):
        B, w, m = batch.x.shape
        if use_missing:
            keep = np.ones((B, w, m), dtype=bool)
            for row, idx in enumerate(batch.indices):
                miss = dataset.samples[idx].missing
                if miss is not None:
                    n = batch.lengths[row]
                    keep[row, :n] = ~miss[:n]
        else:
            keep = batch_masks(batch, mask_spec or MaskSpec(), EVAL_MASK_EPOCH)
        x_in = np.where(keep, batch.x, 0).astype(c.np_dtype)
        with T.no_grad():
            out = model(x_in, batch.lengths, training=False).data.astype(np.float64)
        pred = out * norm.scale + norm.mean
        for row in range(B):
            n = int(batch.lengths[row])
            truth = dataset.samples[batch.indices[row]].series[:n]
            hidden = ~keep[row, :n]
            filled = np.where(hidden, pred[row, :n], truth)
            records.append({"id": batch.ids[row], "truth": truth.tolist(), "keep": (~hidden).astype(int).tolist(),
                            "prediction": filled.tolist()})
            if not use_missing:
                sq += float(((pred[row, :n] - truth) ** 2)[hidden].sum())
                n_cells += int(hidden.sum())
    if use_missing:
        n_cells = sum(int((np.array(r["keep"]) == 0).sum()) for r in records)
        return ImputationResult(records, None, n_cells)
    return ImputationResult(records, float(np.sqrt(sq / n_cells)) if n_cells else None, n_cells)
