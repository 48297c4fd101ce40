"""Cycle-consistent adversarial translation between histology and genomic
prototype tokens, used to impute missing genomics from histology."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ArityError, ConfigError, PreconditionError, RangeError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class SgiConfig:
    lambda_cycle: float = 10.0
    schedule_total_steps: int = 100

    def __post_init__(self):
        if self.lambda_cycle <= 0:
            raise ConfigError("lambda_cycle must be > 0")
        if self.schedule_total_steps < 1:
            raise ConfigError("schedule_total_steps must be a positive integer")


class Direction(str, Enum):
    P_TO_G = "p_to_g"
    G_TO_P = "g_to_p"


class RowLinear(nn.Module):
    """One affine map per prototype row: input (..., R, D_in) -> (..., R, D_out)."""

    def __init__(self, n_rows: int, d_in: int, d_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(n_rows, d_out, d_in))
        self.bias = nn.Parameter(torch.zeros(n_rows, d_out))

    def forward(self, x):
        if x.shape[-2] != self.weight.shape[0]:
            raise ArityError(f"expected {self.weight.shape[0]} rows, got {x.shape[-2]}")
        return torch.einsum("...ri,roi->...ro", x, self.weight) + self.bias


class Translator(nn.Module):
    """W2 leaky_relu(W1 x + b1) + b2 at width D, plus x when ``residual``.

    With ``n_rows`` every prototype row gets its own weights, so row r of one
    modality maps to row r of the other; inputs must then be (..., n_rows, D).
    A residual translator starts as the identity (zero output layer).
    """

    def __init__(
        self,
        dim: int,
        residual: bool = True,
        generator: Optional[torch.Generator] = None,
        n_rows: Optional[int] = None,
    ):
        super().__init__()
        self.residual = residual
        self.n_rows = n_rows
        if n_rows is None:
            self.inner, self.outer = nn.Linear(dim, dim), nn.Linear(dim, dim)
            shape = (dim, dim)
        else:
            self.inner, self.outer = RowLinear(n_rows, dim, dim), RowLinear(n_rows, dim, dim)
            shape = (n_rows, dim, dim)
        with torch.no_grad():
            self.inner.weight.copy_(torch.randn(shape, generator=generator) / math.sqrt(dim))
            self.inner.bias.zero_()
            if residual:
                self.outer.weight.zero_()
            else:
                self.outer.weight.copy_(torch.randn(shape, generator=generator) / math.sqrt(dim))
            self.outer.bias.zero_()

    def forward(self, x):
        h = self.outer(F.leaky_relu(self.inner(x), 0.2))
        return x + h if self.residual else h


class TranslatorPair(nn.Module):
    def __init__(
        self,
        dim: int,
        generator: Optional[torch.Generator] = None,
        F_P_to_G=None,
        F_G_to_P=None,
        residual: bool = True,
        n_rows: Optional[int] = None,
    ):
        super().__init__()
        make = lambda: Translator(dim, residual=residual, generator=generator, n_rows=n_rows)  # noqa: E731
        self.F_P_to_G = F_P_to_G if F_P_to_G is not None else make()
        self.F_G_to_P = F_G_to_P if F_G_to_P is not None else make()


class Discriminator(nn.Module):
    """Affine stack D -> hidden -> 1 with a sigmoid output."""

    def __init__(self, dim: int, hidden: int = 32, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.hidden = nn.Linear(dim, hidden)
        self.out = nn.Linear(hidden, 1)
        with torch.no_grad():
            self.hidden.weight.copy_(torch.randn(hidden, dim, generator=generator) / math.sqrt(dim))
            self.hidden.bias.zero_()
            self.out.weight.copy_(torch.randn(1, hidden, generator=generator) / math.sqrt(hidden))
            self.out.bias.zero_()

    def forward(self, x):
        return torch.sigmoid(self.out(F.leaky_relu(self.hidden(x), 0.2))).squeeze(-1)


class DiscriminatorPair(nn.Module):
    def __init__(self, dim: int, generator: Optional[torch.Generator] = None, D_G=None, D_P=None):
        super().__init__()
        self.D_G = D_G if D_G is not None else Discriminator(dim, generator=generator)
        self.D_P = D_P if D_P is not None else Discriminator(dim, generator=generator)


def translate(x, direction, t: TranslatorPair):
    direction = Direction(direction)
    net = t.F_P_to_G if direction is Direction.P_TO_G else t.F_G_to_P
    return net(x)


def cycle_terms(P_tokens, G_tokens, t: TranslatorPair) -> Tuple[torch.Tensor, torch.Tensor]:
    """Mean absolute round-trip errors (histology term, genomic term)."""
    cyc_p = (t.F_G_to_P(t.F_P_to_G(P_tokens)) - P_tokens).abs().mean()
    cyc_g = (t.F_P_to_G(t.F_G_to_P(G_tokens)) - G_tokens).abs().mean()
    return cyc_p, cyc_g


def cycle_loss(P_tokens, G_tokens, t: TranslatorPair):
    cyc_p, cyc_g = cycle_terms(P_tokens, G_tokens, t)
    return cyc_p + cyc_g


def paired_reconstruction_loss(P_tokens, G_tokens, t: TranslatorPair, observed=None):
    """Mean L1 between translated histology tokens and the same patients' real
    genomic tokens, over the rows flagged in ``observed`` (default: all).

    Cycle and adversarial terms only match distributions; this term ties each
    patient's translation to that patient's genomics.
    """
    if P_tokens.shape != G_tokens.shape:
        raise ArityError(f"paired tokens differ in shape: {tuple(P_tokens.shape)} vs {tuple(G_tokens.shape)}")
    err = (t.F_P_to_G(P_tokens) - G_tokens).abs().mean(dim=-1)
    if observed is None:
        return err.mean()
    observed = observed.to(err.dtype)
    if float(observed.sum()) == 0:
        raise PreconditionError("no observed rows to compare")
    return (err * observed).sum() / observed.sum()


def _log_prob(x):
    return torch.log(x.clamp(PROB_EPS, 1.0 - PROB_EPS))


def adversarial_losses(P_tokens, G_tokens, t: TranslatorPair, d: DiscriminatorPair):
    """Minimax values (L_adv^G, L_adv^P); the discriminators maximize them."""
    fake_g = t.F_P_to_G(P_tokens)
    fake_p = t.F_G_to_P(G_tokens)
    adv_g = _log_prob(d.D_G(G_tokens)).mean() + _log_prob(1.0 - d.D_G(fake_g)).mean()
    adv_p = _log_prob(d.D_P(P_tokens)).mean() + _log_prob(1.0 - d.D_P(fake_p)).mean()
    return adv_g, adv_p


def discriminator_loss(P_tokens, G_tokens, t: TranslatorPair, d: DiscriminatorPair):
    """Loss minimized by the discriminators: -(L_adv^G + L_adv^P).

    Translator outputs are detached so only discriminator parameters move.
    """
    with torch.no_grad():
        fake_g = t.F_P_to_G(P_tokens)
        fake_p = t.F_G_to_P(G_tokens)
    adv_g = _log_prob(d.D_G(G_tokens)).mean() + _log_prob(1.0 - d.D_G(fake_g)).mean()
    adv_p = _log_prob(d.D_P(P_tokens)).mean() + _log_prob(1.0 - d.D_P(fake_p)).mean()
    return -(adv_g + adv_p)


def generator_adversarial_loss(P_tokens, G_tokens, t: TranslatorPair, d: DiscriminatorPair):
    """Non-saturating generator objective -E[log D(fake)] for both directions."""
    return -(_log_prob(d.D_G(t.F_P_to_G(P_tokens))).mean() + _log_prob(d.D_P(t.F_G_to_P(G_tokens))).mean())


def sgi_objective(
    P_tokens, G_tokens, t: TranslatorPair, d: DiscriminatorPair, cfg: SgiConfig = SgiConfig(),
    lambda_cycle: Optional[float] = None,
):
    """L_adv^G + L_adv^P + lambda (L_cycle^P + L_cycle^G).

    ``lambda_cycle`` overrides ``cfg`` and may be 0 to isolate the adversarial sum.
    """
    lam = cfg.lambda_cycle if lambda_cycle is None else lambda_cycle
    if lam < 0:
        raise ConfigError("cycle weight must be >= 0")
    adv_g, adv_p = adversarial_losses(P_tokens, G_tokens, t, d)
    return adv_g + adv_p + lam * cycle_loss(P_tokens, G_tokens, t)


def generator_objective(P_tokens, G_tokens, t: TranslatorPair, d: DiscriminatorPair, cfg: SgiConfig = SgiConfig()):
    return generator_adversarial_loss(P_tokens, G_tokens, t, d) + cfg.lambda_cycle * cycle_loss(P_tokens, G_tokens, t)


def interpolate_genomics(real_g: Optional[torch.Tensor], generated_g: torch.Tensor, m):
    """m * real + (1 - m) * generated; ``m`` may be a scalar or broadcastable tensor."""
    m_t = torch.as_tensor(m, dtype=generated_g.dtype)
    if bool(((m_t < 0) | (m_t > 1)).any()):
        raise RangeError(f"interpolation weight must lie in [0, 1], got {m}")
    if real_g is None:
        if bool((m_t != 0).any()):
            raise PreconditionError("real genomics absent: interpolation weight must be 0")
        return generated_g
    return m_t * real_g + (1.0 - m_t) * generated_g


def interpolation_schedule(step: int, cfg: SgiConfig) -> float:
    """Linear decay from 1 at step 0 to 0 at ``schedule_total_steps``."""
    if step < 0:
        raise PreconditionError("step must be >= 0")
    return max(0.0, 1.0 - step / cfg.schedule_total_steps)


def impute_missing(P_tokens, t: TranslatorPair, real_g=None, missing_rows=None):
    """Genomic tokens with missing rows generated from histology.

    Without ``real_g`` every row is generated.  Otherwise ``missing_rows``
    (bool, broadcastable to the row axis) selects which rows to replace.
    """
    generated = t.F_P_to_G(P_tokens)
    if real_g is None:
        return generated
    if missing_rows is None:
        return real_g
    rows = torch.as_tensor(missing_rows, dtype=torch.bool).unsqueeze(-1)
    return torch.where(rows, generated, real_g)
