"""The entangled couple losses.

One minibatch (x_r, z_p) feeds four couples: the true couple (x_r, z_p)
and three generated kinds
    k1 = (G(z_p), E(x_r))
    k2 = (G(E(x_r)), E(G(z_p)))
    k3 = (G(E(G(z_p))), E(G(E(x_r)))).
The discriminator group minimizes a 3x-weighted real term plus the three
fake terms; the encoder/generator group minimizes non-saturating fake
terms plus an alpha-weighted prior-latent reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, ShapeError
from .networks import IganModel, discriminate, forward_E, forward_G
from .tensor import Tensor

CLAMP_EPS = 1e-7


@dataclass
class CoupleBatch:
    """All forward products of one minibatch; each couple is (data, latent)."""

    x_r: Tensor
    z_p: Tensor
    k1: tuple[Tensor, Tensor]
    k2: tuple[Tensor, Tensor]
    k3: tuple[Tensor, Tensor]
    z_p_rec: Tensor  # E(G(z_p)), the latent side of k2

    @property
    def couples(self):
        return (self.k1, self.k2, self.k3)


@dataclass
class LossBreakdown:
    """Scalar components for logging plus the graph roots for backward."""

    d_true: float | None = None
    d_k1: float | None = None
    d_k2: float | None = None
    d_k3: float | None = None
    eg_k1: float | None = None
    eg_k2: float | None = None
    eg_k3: float | None = None
    latent_rec: float | None = None
    data_cycle: float | None = None
    real_latent_rec: float | None = None
    total_d: Tensor | None = None
    total_eg: Tensor | None = None

    def terms(self):
        """(name, value) pairs for every component present, fixed order."""
        for name in ("d_true", "d_k1", "d_k2", "d_k3", "eg_k1", "eg_k2", "eg_k3",
                     "latent_rec", "data_cycle", "real_latent_rec"):
            value = getattr(self, name)
            if value is not None:
                yield name, value


def forward_couples(model: IganModel, x_r: Tensor, z_p: Tensor,
                    mode: str = "eval") -> CoupleBatch:
    """Run E and G over the minibatch, each composition exactly once.

    mode controls E/G batchnorm. Wrap in no_grad to detach the couples
    from E and G (the discriminator phase).
    """
    if x_r.data.shape[0] != z_p.data.shape[0]:
        raise ShapeError(
            f"batch size mismatch: data {x_r.data.shape[0]} vs latent {z_p.data.shape[0]}"
        )
    z_r = forward_E(model, x_r, mode)
    x_p = forward_G(model, z_p, mode)
    x_rr = forward_G(model, z_r, mode)
    z_pr = forward_E(model, x_p, mode)
    x_pr = forward_G(model, z_pr, mode)
    z_rr = forward_E(model, x_rr, mode)
    return CoupleBatch(x_r, z_p, (x_p, z_r), (x_rr, z_pr), (x_pr, z_rr), z_pr)


def _clamped(score: Tensor) -> Tensor:
    return T.clamp(score, CLAMP_EPS, 1.0 - CLAMP_EPS)


def _mean_neg_log(p: Tensor) -> Tensor:
    return T.scale(T.mean(T.log(p)), -1.0)


def loss_dfh(model: IganModel, cb: CoupleBatch, mode: str = "train",
             true_weight: float = 3.0) -> LossBreakdown:
    """Discriminator-group loss: true_weight * mean(-log D(true)) plus
    mean(-log(1 - D(k_i))) over the three generated couples.

    mode controls F's batchnorm (train during a D-phase update). Couples
    must have been built detached so no gradient reaches E or G.
    """
    out = LossBreakdown()
    p_true = _clamped(discriminate(model, cb.x_r, cb.z_p, mode))
    term_true = _mean_neg_log(p_true)
    out.d_true = term_true.item()
    total = T.scale(term_true, true_weight)
    for name, (data, latent) in zip(("d_k1", "d_k2", "d_k3"), cb.couples):
        p = _clamped(discriminate(model, data, latent, mode))
        term = _mean_neg_log(T.sub(1.0, p))
        setattr(out, name, term.item())
        total = T.add(total, term)
    out.total_d = total
    return out


def loss_eg(model: IganModel, cb: CoupleBatch, alpha: float,
            use_data_cycle: bool = False,
            use_real_latent_rec: bool = False) -> LossBreakdown:
    """Encoder/generator loss: non-saturating mean(-log D(k_i)) over the
    three generated couples plus alpha times the prior-latent
    reconstruction (squared error summed over coordinates, averaged over
    the batch). Gradients flow through D, F, H activations; their
    parameters are simply not stepped in this phase.

    Optional terms, same per-sample-sum convention: data_cycle compares
    x_r with G(E(x_r)), real_latent_rec compares E(G(E(x_r))) with E(x_r).
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be nonnegative, got {alpha}")
    out = LossBreakdown()
    total = None
    for name, (data, latent) in zip(("eg_k1", "eg_k2", "eg_k3"), cb.couples):
        p = _clamped(discriminate(model, data, latent, mode="eval"))
        term = _mean_neg_log(p)
        setattr(out, name, term.item())
        total = term if total is None else T.add(total, term)

    latent_rec = T.scale(T.mse(cb.z_p_rec, cb.z_p), float(model.arch.latent_dim))
    out.latent_rec = latent_rec.item()
    if alpha > 0:
        total = T.add(total, T.scale(latent_rec, alpha))

    if use_data_cycle:
        cyc = T.scale(T.mse(cb.x_r, cb.k2[0]), float(model.arch.flat_data_dim))
        out.data_cycle = cyc.item()
        total = T.add(total, cyc)
    if use_real_latent_rec:
        rlr = T.scale(T.mse(cb.k3[1], cb.k1[1]), float(model.arch.latent_dim))
        out.real_latent_rec = rlr.item()
        total = T.add(total, rlr)

    out.total_eg = total
    return out


def minimax_value(model: IganModel, x_r: Tensor, z_p: Tensor) -> float:
    """Raw adversarial payoff E[D(true couple)] - E[D(k1 couple)],
    unclamped and in eval mode; a diagnostic, not a training objective."""
    with T.no_grad():
        true_score = discriminate(model, x_r, z_p, mode="eval").data.mean()
        x_p = forward_G(model, z_p, mode="eval")
        z_r = forward_E(model, x_r, mode="eval")
        k1_score = discriminate(model, x_p, z_r, mode="eval").data.mean()
    return float(true_score - k1_score)
