"""Two-phase alternating training.

Phase 1 fits the prototyping stack, fusion mixer and task head on the task
loss alone.  Phase 2 adds the alignment loss (critic and [CLS] aggregators
stepped every ``accumulation`` batches, frozen once the epoch-mean loss
stalls), the adversarial/cycle imputation objectives, and a training-time
patient-wise missing rate that ramps up over the phase while the weight on
real genomics for those patients decays to zero.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .alignment import AlignmentConfig, alignment_loss, diversity_regularizer, mi_estimator_loss, sample_alignment_loss
from .config import FillStrategy, TrainConfig
from .data_model import N_GROUPS, Cohort, apply_missingness, missing_count
from .errors import ConfigError, DivergenceError
from .imputation import (
    SgiConfig,
    cycle_terms,
    discriminator_loss,
    generator_adversarial_loss,
    interpolation_schedule,
    paired_reconstruction_loss,
)
from .model import Batch, ProtoFuseModel, make_batch
from .tasks import Task, classification_loss, quartile_cuts, survival_loss

log = logging.getLogger(__name__)


@dataclass
class ModelState:
    model: ProtoFuseModel
    config: TrainConfig
    gene_ids: Tuple[str, ...]
    gene_groups: np.ndarray
    category_names: Tuple[str, ...]
    d_embed: int
    cuts: Optional[np.ndarray] = None
    mean_tokens: Optional[torch.Tensor] = None
    step: int = 0
    phase: int = 1
    frozen: bool = False
    freeze_epoch: Optional[int] = None
    log: List[Dict[str, float]] = field(default_factory=list)


def task_loss(model: ProtoFuseModel, logits, batch: Batch):
    if model.task is Task.SURVIVAL:
        return survival_loss(logits, batch.time_bin, batch.event)
    labels = batch.diagnosis if model.task is Task.DIAGNOSIS else batch.grade
    return classification_loss(logits, labels)


def params_hash(params: Sequence[torch.nn.Parameter]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def _check_finite(**losses):
    for name, value in losses.items():
        if value is not None and not torch.isfinite(value).all():
            raise DivergenceError(f"loss component {name!r} became non-finite")


def _set_trainable(params, flag: bool):
    for p in params:
        p.requires_grad_(flag)


def build_model(cohort: Cohort, cfg: TrainConfig) -> ProtoFuseModel:
    return build_model_from(cfg, cohort.d_embed, cohort.histology_category_names)


def build_model_from(cfg: TrainConfig, d_embed: int, category_names: Sequence[str]) -> ProtoFuseModel:
    return ProtoFuseModel(
        d_embed=d_embed,
        dim=cfg.model_dim,
        task=cfg.task,
        category_names=category_names,
        top_k=cfg.top_k,
        n_iterations=cfg.n_iterations,
        multimodal=cfg.multimodal,
        seed=cfg.seed,
    )


@torch.no_grad()
def compute_mean_tokens(model: ProtoFuseModel, cohort: Cohort, gene_groups) -> Optional[torch.Tensor]:
    """Cohort mean of each genomic prototype over patients where it is observed."""
    patients = [p for p in cohort.patients if p.has_genomics]
    if not model.multimodal or not patients:
        return None
    batch = make_batch(patients, [0] * len(patients), gene_groups)
    g_real, empty = model.genomic_prototypes(batch)
    keep = (~empty).unsqueeze(-1).to(g_real.dtype)
    return (g_real * keep).sum(0) / keep.sum(0).clamp_min(1.0)


@torch.no_grad()
def paired_cosine(model: ProtoFuseModel, cohort: Cohort, gene_groups) -> float:
    """Mean cosine between paired pooled histology/genomic vectors in the critic space."""
    patients = [p for p in cohort.patients if p.has_genomics]
    if not model.multimodal or not patients:
        return float("nan")
    batch = make_batch(patients, [0] * len(patients), gene_groups)
    out = model(batch)
    return float(model.critic.paired_cosine(out["pooled_p"], out["pooled_g"]).mean())


@torch.no_grad()
def _validation_loss(model, cohort: Cohort, cfg: TrainConfig, cuts, gene_groups) -> float:
    pairs = [(p, s) for p in cohort.patients for s in range(len(p.slides))]
    batch = make_batch([p for p, _ in pairs], [s for _, s in pairs], gene_groups, cuts)
    return float(task_loss(model, model(batch)["logits"], batch))


def train(cohort: Cohort, cfg: TrainConfig, val_cohort: Optional[Cohort] = None) -> Tuple[ModelState, List[Dict]]:
    """Train one task model; returns the state and its per-epoch log rows.

    The first log row (epoch 0) describes the untrained model.  With a
    ``val_cohort`` the run stops early once validation task loss has not
    improved for ``cfg.patience`` epochs and the best weights are restored.
    """
    if len(cohort) < 2:
        raise ConfigError("training needs at least two patients")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if cfg.training_missingness is not None:
        cohort = apply_missingness(cohort, cfg.training_missingness)

    model = build_model(cohort, cfg)
    groups = model.group_parameters()
    gene_groups = cohort.gene_groups
    if model.multimodal and len(gene_groups) == 0:
        raise ConfigError("multimodal training needs a cohort with genomic profiles")
    cuts = quartile_cuts([p.survival_time for p in cohort.patients]) if cfg.task is Task.SURVIVAL else None
    state = ModelState(model, cfg, cohort.gene_ids, gene_groups, cohort.histology_category_names, cohort.d_embed, cuts)

    main_params = groups["prototyping"] + groups["fusion"] + groups["heads"] + groups["generator"]
    opt_main = torch.optim.Adam(main_params, lr=cfg.learning_rate)
    opt_align = torch.optim.Adam(groups["alignment"], lr=cfg.learning_rate)
    opt_disc = torch.optim.Adam(groups["discriminator"], lr=cfg.learning_rate)
    align_cfg = AlignmentConfig(lambda_reg=cfg.lambda_reg)

    n = len(cohort)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sgi_cfg = SgiConfig(cfg.lambda_cycle, cfg.schedule_total_steps or max(1, cfg.phase2_epochs * steps_per_epoch))

    rows: List[Dict] = []
    state.log = rows
    rows.append(_log_row(state, 0, 1, {}, cohort))
    ma_history: List[float] = []
    phase2_step = 0
    accum = 0
    best = (math.inf, None, 0)  # (val loss, state dict, epochs since improvement)

    for epoch in range(1, cfg.epochs + 1):
        phase = 1 if epoch <= cfg.phase1_epochs else 2
        state.phase = phase
        _set_trainable(groups["alignment"], phase == 2 and not state.frozen)
        _set_trainable(groups["generator"] + groups["discriminator"], phase == 2)

        rate = 0.0
        if phase == 2 and model.multimodal:
            j = epoch - cfg.phase1_epochs - 1
            rate = cfg.max_train_missing_rate * j / max(cfg.phase2_epochs - 1, 1)
        sim_missing = np.zeros(n, dtype=bool)
        sim_missing[rng.permutation(n)[: missing_count(rate, n)]] = True
        slide_idx = [int(rng.integers(len(p.slides))) for p in cohort.patients]
        order = rng.permutation(n)

        fill = None
        if phase == 2 and cfg.fill_strategy is FillStrategy.MEAN_FILL:
            fill = compute_mean_tokens(model, cohort, gene_groups)

        sums: Dict[str, float] = {}
        counts: Dict[str, int] = {}

        def acc(name, value):
            if value is not None:
                sums[name] = sums.get(name, 0.0) + float(value.detach() if torch.is_tensor(value) else value)
                counts[name] = counts.get(name, 0) + 1

        m_value = 1.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = make_batch([cohort.patients[i] for i in idx], [slide_idx[i] for i in idx], gene_groups, cuts)
            missing = torch.from_numpy(sim_missing[idx])
            m_value = interpolation_schedule(phase2_step, sgi_cfg) if phase == 2 else 1.0
            real_weight = torch.full((len(idx),), m_value)
            out = model(batch, missing=missing, real_weight=real_weight, fill_tokens=fill)
            loss_task = task_loss(model, out["logits"], batch)
            total = loss_task
            loss_ma = loss_gen = loss_d = None

            if phase == 2 and model.multimodal:
                paired = batch.has_genomics & ~missing
                if int(paired.sum()) >= 2:
                    p_vec, g_vec = out["pooled_p"][paired], out["pooled_g"][paired]
                    mie = mi_estimator_loss(p_vec, g_vec, model.critic)
                    reg = diversity_regularizer(g_vec)
                    smp = sample_alignment_loss(p_vec, g_vec)
                    loss_ma = smp + mie + align_cfg.lambda_reg * reg
                    acc("mie", mie)
                    acc("reg", reg)
                    acc("sample", smp)
                    total = total + loss_ma

                # adversarial and cycle terms use patients whose six genomic rows are all observed
                full = batch.has_genomics & ~out["group_empty"].any(dim=-1)
                if bool(full.any()):
                    p_rows = out["p_raw"][full].detach()
                    g_rows = out["g_real"][full].detach()
                    opt_disc.zero_grad()
                    loss_d = discriminator_loss(p_rows, g_rows, model.translators, model.discriminators)
                    _check_finite(discriminator=loss_d)
                    loss_d.backward()
                    opt_disc.step()
                    with torch.no_grad():
                        d = model.discriminators
                        real_ok = (d.D_G(g_rows) > 0.5).float().mean() + (d.D_P(p_rows) > 0.5).float().mean()
                        fake_ok = (d.D_G(model.translators.F_P_to_G(p_rows)) < 0.5).float().mean() + (
                            d.D_P(model.translators.F_G_to_P(g_rows)) < 0.5
                        ).float().mean()
                    acc("disc_acc", (real_ok + fake_ok) / 4)
                    cyc_p, cyc_g = cycle_terms(p_rows, g_rows, model.translators)
                    adv = generator_adversarial_loss(p_rows, g_rows, model.translators, model.discriminators)
                    loss_gen = adv + cfg.lambda_cycle * (cyc_p + cyc_g)
                    acc("cycle", cyc_p + cyc_g)
                    acc("gen_adv", adv)
                has = batch.has_genomics
                if cfg.lambda_paired > 0 and bool(has.any()) and bool((~out["group_empty"][has]).any()):
                    rec = paired_reconstruction_loss(
                        out["p_raw"][has].detach(), out["g_real"][has].detach(), model.translators,
                        observed=~out["group_empty"][has],
                    )
                    loss_gen = cfg.lambda_paired * rec if loss_gen is None else loss_gen + cfg.lambda_paired * rec
                    acc("paired_rec", rec)
                if loss_gen is not None:
                    total = total + loss_gen

            _check_finite(task=loss_task, alignment=loss_ma, imputation=loss_gen, total=total)
            acc("task", loss_task)
            acc("ma", loss_ma)
            acc("disc", loss_d)
            opt_main.zero_grad()
            total.backward()
            opt_main.step()
            if phase == 2:
                phase2_step += 1
                if not state.frozen:
                    accum += 1
                    if accum % cfg.accumulation == 0:
                        opt_align.step()
                        opt_align.zero_grad()
            state.step += 1

        means = {k: sums[k] / counts[k] for k in sums}
        means["train_missing_rate"] = rate
        means["interp_weight"] = m_value if phase == 2 else 1.0

        if phase == 2 and "ma" in means and not state.frozen:
            ma_history.append(means["ma"])
            if _stalled(ma_history, cfg.freeze_tolerance, cfg.freeze_window):
                state.frozen = True
                state.freeze_epoch = epoch
                opt_align.zero_grad()
                _set_trainable(groups["alignment"], False)
                log.info("alignment frozen after epoch %d", epoch)

        if val_cohort is not None:
            vloss = _validation_loss(model, val_cohort, cfg, cuts, gene_groups)
            means["val_task"] = vloss
            if vloss < best[0]:
                best = (vloss, copy.deepcopy(model.state_dict()), 0)
            else:
                best = (best[0], best[1], best[2] + 1)
        rows.append(_log_row(state, epoch, phase, means, cohort))
        if val_cohort is not None and best[2] >= cfg.patience:
            log.info("early stopping at epoch %d", epoch)
            break

    if val_cohort is not None and best[1] is not None:
        model.load_state_dict(best[1])
    _set_trainable(model.parameters(), True)
    state.mean_tokens = compute_mean_tokens(model, cohort, gene_groups)
    return state, rows


def _stalled(history: List[float], tol: float, window: int) -> bool:
    if len(history) <= window:
        return False
    recent = history[-(window + 1):]
    for prev, cur in zip(recent, recent[1:]):
        if (prev - cur) / max(abs(prev), 1e-12) >= tol:
            return False
    return True


LOG_COLUMNS = (
    "epoch", "phase", "task", "ma", "mie", "reg", "sample", "cycle", "paired_rec", "gen_adv", "disc", "disc_acc",
    "train_missing_rate", "interp_weight", "paired_cosine", "frozen", "val_task",
    "hash_alignment", "hash_generator", "hash_discriminator",
)


def _log_row(state: ModelState, epoch: int, phase: int, means: Dict[str, float], cohort: Cohort) -> Dict:
    groups = state.model.group_parameters()
    row = {"epoch": epoch, "phase": phase}
    row.update(means)
    row["paired_cosine"] = paired_cosine(state.model, cohort, state.gene_groups)
    row["frozen"] = int(state.frozen)
    row["hash_alignment"] = params_hash(groups["alignment"])
    row["hash_generator"] = params_hash(groups["generator"])
    row["hash_discriminator"] = params_hash(groups["discriminator"])
    return row


def format_log(rows: List[Dict]) -> str:
    lines = ["\t".join(LOG_COLUMNS)]
    for r in rows:
        cells = []
        for c in LOG_COLUMNS:
            v = r.get(c)
            if v is None:
                cells.append("NA")
            elif isinstance(v, float):
                cells.append("NA" if math.isnan(v) else f"{v:.6f}")
            else:
                cells.append(str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
