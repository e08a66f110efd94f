"""AdamW, multi-task teacher training and student distillation."""

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from sublab import tensor as T
from sublab.exceptions import ContractError, RunError
from sublab.log import get_logger
from sublab.models.transformer import (
    PRIVATE_HEAD,
    PUBLIC_HEAD,
    ModelParams,
    apply_model,
    clone_student_from_teacher,
    encode,
    init_params,
)
from sublab.rng import numpy_generator
from sublab.schemas.mitigation import MitigationConfig, MitigationMode
from sublab.schemas.model import ModelConfig
from sublab.schemas.training import (
    BaseInit,
    Condition,
    DataRegime,
    EpochRecord,
    History,
    TrainConfig,
)
from sublab.services.corpus import Dataset, Splits
from sublab.services.mitigation import (
    Discriminator,
    adversarial_loss,
    projection_penalty,
    rrr_penalty,
)
from sublab.services.similarity import TraitBasis
from sublab.tensor import Array, IntArray, Tape, Tensor

log = get_logger(__name__)

type EpochCallback = Callable[[EpochRecord], None]


@dataclass
class OptimState:
    m: dict[str, Array]
    v: dict[str, Array]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Array]) -> "OptimState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adamw_step(
    params: Mapping[str, Array],
    grads: Mapping[str, Array],
    state: OptimState,
    config: TrainConfig,
) -> tuple[dict[str, Array], OptimState]:
    """Bias-corrected Adam update with decoupled weight decay ``lr * wd * theta``."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ContractError("params, grads and optimizer state name different tensors")
    step = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1**step, 1.0 - b2**step
    new_params: dict[str, Array] = {}
    new_m: dict[str, Array] = {}
    new_v: dict[str, Array] = {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape or state.m[name].shape != theta.shape:
            raise ContractError(
                f"{name}: gradient {g.shape} does not match parameter {theta.shape}"
            )
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        new_params[name] = theta - config.lr * (update + config.weight_decay * theta)
        new_m[name], new_v[name] = m, v
    return new_params, OptimState(new_m, new_v, step)


@dataclass
class TrainResult:
    params: ModelParams
    history: History
    discriminator: Discriminator | None = None
    steps: int = 0


@dataclass
class CorpusVariants:
    """The BASE splits and the DIFFDATA splits a student may distill on."""

    base: Splits
    diffdata: Splits

    def for_condition(self, condition: Condition) -> Splits:
        return self.diffdata if condition.data is DataRegime.DIFFDATA else self.base


def _present[V](value: V | None, what: str) -> V:
    if value is None:
        raise ContractError(f"{what} missing")
    return value


def _observer_step(
    disc: Discriminator, state: OptimState, cls: Array, y: IntArray, config: TrainConfig
) -> tuple[Discriminator, OptimState]:
    tape = Tape()
    weights = disc.watch(tape)
    loss = adversarial_loss(Tensor(cls), y, weights, 0.0)
    new_params, state = adamw_step(disc.params, tape.gradient(loss, weights), state, config)
    return Discriminator(new_params), state


def _accuracy(logits: Array, labels: IntArray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels)) if len(labels) else 0.0


def _ensure_finite(loss: Tensor, stage: str, epoch: int, step: int, last: float) -> None:
    if not np.isfinite(loss.item()):
        raise RunError(
            f"{stage} diverged: non-finite loss at epoch {epoch}, step {step}",
            diagnostics={"stage": stage, "epoch": epoch, "step": step, "last_finite_loss": last},
        )


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[IntArray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_teacher(
    splits: Splits,
    model_config: ModelConfig,
    train_config: TrainConfig,
    on_epoch: EpochCallback | None = None,
) -> TrainResult:
    """Minimise CE(public) + CE(private) over shuffled mini-batches."""
    train, val = splits.train, splits.val
    params = init_params(model_config, private_head=True)
    state = OptimState.zeros_like(params.tensors)
    rng = numpy_generator(train_config.shuffle_seed)
    history = History(role="teacher")
    last = float("nan")
    for epoch in range(1, train_config.epochs + 1):
        total, seen = 0.0, 0
        for idx in _batches(len(train), train_config.batch_size, rng):
            tape = Tape()
            weights = params.watch(tape)
            out = apply_model(weights, model_config, train.tokens[idx])
            logits_priv = _present(out.logits_priv, "teacher private logits")
            loss = T.softmax_cross_entropy(
                out.logits_pub, train.y_pub[idx]
            ) + T.softmax_cross_entropy(logits_priv, train.y_priv[idx])
            _ensure_finite(loss, "teacher", epoch, state.step + 1, last)
            grads = tape.gradient(loss, weights)
            new_tensors, state = adamw_step(params.tensors, grads, state, train_config)
            params = ModelParams(model_config, new_tensors)
            last = loss.item()
            total += last * len(idx)
            seen += len(idx)

        tr = encode(params, train.tokens, train_config.eval_batch_size)
        va = encode(params, val.tokens, train_config.eval_batch_size)
        tr_priv = _present(tr.logits_priv, "teacher private logits")
        va_priv = _present(va.logits_priv, "teacher private logits")
        record = EpochRecord(
            epoch=epoch,
            loss=total / seen,
            pub_acc=_accuracy(tr.logits_pub, train.y_pub),
            val_pub_acc=_accuracy(va.logits_pub, val.y_pub),
            priv_acc=_accuracy(tr_priv, train.y_priv),
            val_priv_acc=_accuracy(va_priv, val.y_priv),
        )
        history.records.append(record)
        log.info("teacher epoch", extra=record.model_dump())
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(params=params, history=history, steps=state.step)


def public_match(student: ModelParams, teacher: ModelParams, dataset: Dataset) -> float:
    """Fraction of examples where both public argmaxes agree (ties -> class 0)."""
    if len(dataset) == 0:
        return 0.0
    s = encode(student, dataset.tokens).logits_pub
    t = encode(teacher, dataset.tokens).logits_pub
    return float(np.mean(np.argmax(s, axis=1) == np.argmax(t, axis=1)))


def init_student(teacher: ModelParams, condition: Condition, student_seed: int) -> ModelParams:
    """Clone for SAME_BASE; fresh draw from ``student_seed`` for DIFF_BASE."""
    if condition.base is BaseInit.SAME_BASE:
        return clone_student_from_teacher(teacher)
    config = teacher.config.model_copy(update={"seed": student_seed})
    return init_params(config, private_head=False)


def distill_student(
    teacher: ModelParams,
    condition: Condition,
    mitigation: MitigationConfig,
    corpora: CorpusVariants,
    train_config: TrainConfig,
    *,
    student_seed: int = 0,
    basis: TraitBasis | None = None,
    discriminator_seed: int = 0,
    observe_discriminator: bool = False,
    on_epoch: EpochCallback | None = None,
) -> TrainResult:
    """Distill the teacher's public logits into a one-headed student.

    The student trains on the condition's split; fidelity is tracked against
    the teacher on the BASE validation split every epoch.

    With ``observe_discriminator`` a run without the adversarial term still
    trains the same discriminator, on detached CLS, so its accuracy can be
    compared with an ADVERSARIAL run. The student never sees its gradient.
    """
    if not teacher.has_private_head:
        raise ContractError("distillation expects the trained two-headed teacher")
    if mitigation.requires_basis and basis is None:
        raise ContractError(f"{mitigation.mode} needs the teacher trait basis")

    train = corpora.for_condition(condition).train
    val = corpora.base.val
    student = init_student(teacher, condition, student_seed)
    config = student.config
    batch = train_config.eval_batch_size
    teacher_logits = encode(teacher, train.tokens, batch).logits_pub
    teacher_targets = np.argmax(teacher_logits, axis=1)
    teacher_val_pred = np.argmax(encode(teacher, val.tokens, batch).logits_pub, axis=1)

    discriminator: Discriminator | None = None
    disc_state: OptimState | None = None
    adversarial = mitigation.mode is MitigationMode.ADVERSARIAL
    if adversarial or observe_discriminator:
        discriminator = Discriminator.init(config.d, discriminator_seed)
        disc_state = OptimState.zeros_like(discriminator.params)

    state = OptimState.zeros_like(student.tensors)
    rng = numpy_generator(train_config.shuffle_seed)
    history = History(role=f"student/{condition.name}")
    last = float("nan")
    for epoch in range(1, train_config.epochs + 1):
        total, seen, disc_hits, disc_seen = 0.0, 0, 0, 0
        for idx in _batches(len(train), train_config.batch_size, rng):
            tape = Tape()
            weights = student.watch(tape)
            out = apply_model(weights, config, train.tokens[idx])
            loss = T.kl_divergence(
                out.logits_pub,
                teacher_logits[idx],
                train_config.kd_temperature,
                train_config.kl_direction,
            )
            if train_config.student_hard_label_weight > 0:
                ce = T.softmax_cross_entropy(out.logits_pub, train.y_pub[idx])
                loss = loss + train_config.student_hard_label_weight * ce

            disc_weights: dict[str, Tensor] = {}
            match mitigation.mode:
                case MitigationMode.PROJECTION:
                    loss = loss + projection_penalty(
                        out.cls, _present(basis, "trait basis"), mitigation.alpha
                    )
                case MitigationMode.RRR:
                    loss = loss + rrr_penalty(
                        out.cls,
                        out.logits_pub,
                        teacher_targets[idx],
                        weights[PUBLIC_HEAD],
                        _present(basis, "trait basis"),
                        mitigation.lambda_rrr,
                    )
                case MitigationMode.ADVERSARIAL:
                    disc = _present(discriminator, "discriminator")
                    y = train.y_priv[idx]
                    # A single-class batch gives the discriminator nothing to learn.
                    if np.unique(y).size > 1:
                        disc_weights = disc.watch(tape)
                        loss = loss + adversarial_loss(
                            out.cls, y, disc_weights, mitigation.lambda_adv
                        )
                        disc_hits += int(np.sum(disc.predict(out.cls.data) == y))
                        disc_seen += len(idx)

            if observe_discriminator and not adversarial:
                y = train.y_priv[idx]
                if np.unique(y).size > 1:
                    disc = _present(discriminator, "discriminator")
                    disc_hits += int(np.sum(disc.predict(out.cls.data) == y))
                    disc_seen += len(idx)
                    discriminator, disc_state = _observer_step(
                        disc,
                        _present(disc_state, "discriminator optimiser state"),
                        out.cls.data,
                        y,
                        train_config,
                    )

            _ensure_finite(loss, history.role, epoch, state.step + 1, last)
            grads = tape.gradient(loss, {**weights, **disc_weights})
            new_tensors, state = adamw_step(
                student.tensors, {k: grads[k] for k in weights}, state, train_config
            )
            student = ModelParams(config, new_tensors)
            if disc_weights:
                new_disc, disc_state = adamw_step(
                    _present(discriminator, "discriminator").params,
                    {k: grads[k] for k in disc_weights},
                    _present(disc_state, "discriminator optimiser state"),
                    train_config,
                )
                discriminator = Discriminator(new_disc)
            last = loss.item()
            total += last * len(idx)
            seen += len(idx)

        va = encode(student, val.tokens, batch).logits_pub
        tr = encode(student, train.tokens, batch).logits_pub
        record = EpochRecord(
            epoch=epoch,
            loss=total / seen,
            pub_acc=_accuracy(tr, train.y_pub),
            val_pub_acc=_accuracy(va, val.y_pub),
            public_match=_accuracy(va, teacher_val_pred),
            disc_acc=disc_hits / disc_seen if disc_seen else None,
        )
        history.records.append(record)
        log.info("student epoch", extra=record.model_dump())
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(
        params=student,
        history=history,
        discriminator=discriminator,
        steps=state.step,
    )


def teacher_private_head_accuracy(teacher: ModelParams, dataset: Dataset) -> float:
    enc = encode(teacher, dataset.tokens)
    if enc.logits_priv is None:
        raise ContractError(f"model has no {PRIVATE_HEAD}")
    return _accuracy(enc.logits_priv, dataset.y_priv)
