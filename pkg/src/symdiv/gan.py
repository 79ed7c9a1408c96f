"""Adversarial training on the planar four-mode source with three objectives:
Wasserstein with one-sided gradient penalty, the alpha-divergence variational
objective, and the Lipschitz-constrained alpha objective with the per-batch
shift solved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .funcspace import FDivGenerator
from .groups import LinearAction, make_cyclic, planar_rotation_action
from .measures import SampleSet, TMixtureConfig, sample_t_mixture
from .metrics import invariance_error, mode_occupancy, orthogonal_residual


@dataclass(frozen=True)
class LossSpec:
    """kind: 'wgan_gp' | 'falpha' | 'lipalpha'."""

    kind: str = "lipalpha"
    alpha: float = 2.0
    lambda2: float = 10.0

    def __post_init__(self):
        if self.kind not in ("wgan_gp", "falpha", "lipalpha"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")
        if self.kind in ("falpha", "lipalpha") and self.alpha <= 1:
            raise ValueError("alpha losses require alpha > 1")

    @property
    def uses_penalty(self) -> bool:
        return self.kind in ("wgan_gp", "lipalpha")


@dataclass(frozen=True)
class GanConfig:
    generator_variant: str = "eqv"
    discriminator_variant: str = "inv"
    sym_layer: bool = False
    loss: LossSpec = field(default_factory=LossSpec)
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    d_steps_per_g: int = 2
    batch: int = 64
    epochs: int = 10_000
    seed: int = 0
    data: TMixtureConfig = field(default_factory=TMixtureConfig)
    n_train: int = 200
    noise_dim: int = 10
    hidden: int = 64
    eval_interval: int = 500
    eval_samples: int = 512
    # The initial-state invariance check uses a larger sample: the energy
    # distance between a draw and its group augmentation shrinks like 1/n
    # under invariance, so power against near-invariant laws needs size.
    init_eval_samples: int = 4096
    ema_alpha: float = 0.9999


class TrainingAborted(RuntimeError):
    """Raised on a NaN loss; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainState:
    config: GanConfig
    generator: nn.Network
    discriminator: nn.Network
    action_z: LinearAction
    action_x: LinearAction
    ema: np.ndarray
    ema_steps: int
    epoch: int
    history: dict
    train_set: SampleSet


def toy_actions(cfg: GanConfig) -> tuple[LinearAction, LinearAction]:
    """Quarter-turn rotations: in the data plane on R^12, in the first two
    noise coordinates on R^10 (identity elsewhere)."""
    group = make_cyclic(4)
    action_x = planar_rotation_action(group, cfg.data.ambient_dim, cfg.data.plane)
    z_plane = np.zeros((2, cfg.noise_dim))
    z_plane[0, 0] = 1.0
    z_plane[1, 1] = 1.0
    action_z = planar_rotation_action(group, cfg.noise_dim, z_plane)
    return action_z, action_x


def _centered_conjugate_node(loss: LossSpec, y: nn.Node) -> nn.Node:
    """f*(y + f'(1)) - f'(1): the tilted conjugate, vanishing at 0."""
    a = loss.alpha
    base = nn.relu(nn.add_const(nn.scale(y, a - 1.0), 1.0))
    return nn.add_const(nn.scale(nn.powc(base, a / (a - 1.0)), 1.0 / a), -1.0 / a)


def _centered_conjugate_vals(loss: LossSpec, y: np.ndarray) -> np.ndarray:
    a = loss.alpha
    base = np.maximum((a - 1.0) * y + 1.0, 0.0)
    return np.power(base, a / (a - 1.0)) / a - 1.0 / a


def empirical_lambda_nu(loss: LossSpec, gamma_vals: np.ndarray, iters: int = 120) -> float:
    """Minimizing shift of nu + mean f~*(gamma - nu) over the fake batch."""
    lo = float(gamma_vals.min()) - 1.0
    hi = float(gamma_vals.max()) + 1.0

    def obj(nu):
        return nu + float(np.mean(_centered_conjugate_vals(loss, gamma_vals - nu)))

    for _ in range(iters):
        third = (hi - lo) / 3.0
        m1, m2 = lo + third, hi - third
        if obj(m1) <= obj(m2):
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


def _interpolate_grad_sq(disc: nn.Network, pnodes: dict, x_real: np.ndarray,
                         x_fake: np.ndarray, rng: np.random.Generator) -> nn.Node:
    """|grad_x gamma|^2 on per-pair real/fake interpolates, as graph nodes.

    The input gradient is built as nodes, so any penalty derived from it
    contributes to the discriminator parameter gradients through a second
    backward pass.
    """
    if x_real.shape != x_fake.shape:
        raise ValueError("real/fake batch shape mismatch")
    t = rng.uniform(size=(x_real.shape[0], 1))
    x = nn.leaf(t * x_fake + (1.0 - t) * x_real)
    out = disc.apply(x, pnodes)
    gx = nn.backward(nn.reduce_sum(out), [x])[x.serial]
    return nn.reduce_sum(nn.mul(gx, gx), axis=1)


def gradient_penalty(disc: nn.Network, pnodes: dict, x_real: np.ndarray,
                     x_fake: np.ndarray, rng: np.random.Generator) -> nn.Node:
    """One-sided soft Lipschitz constraint E max{0, |grad_x gamma|^2 - 1}."""
    sq_norm = _interpolate_grad_sq(disc, pnodes, x_real, x_fake, rng)
    return nn.mean(nn.relu(nn.add_const(sq_norm, -1.0)))


def gradient_penalty_two_sided(disc: nn.Network, pnodes: dict, x_real: np.ndarray,
                               x_fake: np.ndarray, rng: np.random.Generator
                               ) -> nn.Node:
    """E (|grad_x gamma| - 1)^2: drives the gradient norm to exactly one
    everywhere along the interpolates (the standard coupling for the
    Wasserstein objective, whose optimal critic has unit slope)."""
    sq_norm = _interpolate_grad_sq(disc, pnodes, x_real, x_fake, rng)
    d = nn.add_const(nn.powpos(nn.add_const(sq_norm, 1e-12), 0.5), -1.0)
    return nn.mean(nn.mul(d, d))


def penalty_for(loss: LossSpec):
    """The gradient penalty matching the loss: the Wasserstein objective pins
    the critic slope to one (two-sided), the Lipschitz-alpha objective only
    caps it (one-sided)."""
    return gradient_penalty_two_sided if loss.kind == "wgan_gp" else gradient_penalty


def discriminator_objective(loss: LossSpec, gamma_real: nn.Node, gamma_fake: nn.Node
                            ) -> nn.Node:
    """The divergence estimate the discriminator maximizes (penalty excluded)."""
    if loss.kind == "wgan_gp":
        return nn.sub(nn.mean(gamma_real), nn.mean(gamma_fake))
    if loss.kind == "falpha":
        return nn.sub(nn.mean(gamma_real),
                      nn.mean(_centered_conjugate_node(loss, gamma_fake)))
    # lipalpha: the inner shift is solved exactly per batch; by the envelope
    # property of the inner convex minimum it is treated as a constant in backward
    nu = empirical_lambda_nu(loss, gamma_fake.value.reshape(-1))
    lam = nn.add_const(
        nn.mean(_centered_conjugate_node(loss, nn.add_const(gamma_fake, -nu))), nu
    )
    return nn.sub(nn.mean(gamma_real), lam)


def generator_objective(loss: LossSpec, gamma_fake: nn.Node) -> nn.Node:
    """The generator's minimization target (the fake-side part of the estimate)."""
    if loss.kind == "wgan_gp":
        return nn.scale(nn.mean(gamma_fake), -1.0)
    if loss.kind == "falpha":
        return nn.scale(nn.mean(_centered_conjugate_node(loss, gamma_fake)), -1.0)
    nu = empirical_lambda_nu(loss, gamma_fake.value.reshape(-1))
    lam = nn.add_const(
        nn.mean(_centered_conjugate_node(loss, nn.add_const(gamma_fake, -nu))), nu
    )
    return nn.scale(lam, -1.0)


def _grad_arrays(loss_node: nn.Node, pnodes: dict[str, nn.Node]) -> dict[str, np.ndarray]:
    grads = nn.backward(loss_node, list(pnodes.values()))
    return {name: grads[node.serial].value for name, node in pnodes.items()}


def init_state(config: GanConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    action_z, action_x = toy_actions(config)
    train_set = sample_t_mixture(config.data, config.n_train, rng)
    gen = nn.build_generator(config.generator_variant, action_z, action_x, rng,
                             hidden=config.hidden, sym_layer=config.sym_layer)
    disc = nn.build_discriminator(config.discriminator_variant, action_x, rng,
                                  hidden=config.hidden)
    history = {"epoch": [], "loss": [], "mode_freq": [], "min_mode_freq": [],
               "orth_median": [], "orth_p90": [], "inv_ed": [], "inv_null_lo": [],
               "inv_null_hi": []}
    return TrainState(
        config=config, generator=gen, discriminator=disc, action_z=action_z,
        action_x=action_x, ema=np.zeros_like(gen.param_vector()), ema_steps=0,
        epoch=0, history=history, train_set=train_set,
    )


def ema_vector(state: TrainState) -> np.ndarray:
    """Bias-corrected moving average of the generator weights."""
    a = state.config.ema_alpha
    if state.ema_steps == 0:
        return state.generator.param_vector()
    return state.ema / (1.0 - a ** state.ema_steps)


def snapshot_samples(state: TrainState, n: int, rng: np.random.Generator) -> SampleSet:
    """Generator samples drawn with the EMA weights (training weights untouched)."""
    gen = state.generator
    saved = gen.param_vector()
    gen.set_param_vector(ema_vector(state))
    z = rng.standard_normal((n, state.config.noise_dim))
    out = gen(z, rng=rng)
    gen.set_param_vector(saved)
    return SampleSet(out, provenance=f"generator@epoch{state.epoch}")


def _evaluate(state: TrainState, last_loss: float) -> None:
    cfg = state.config
    eval_rng = np.random.default_rng((cfg.seed, 0xE7A1, state.epoch))
    n_eval = cfg.init_eval_samples if state.epoch == 0 else cfg.eval_samples
    samples = snapshot_samples(state, n_eval, eval_rng)
    mode = mode_occupancy(samples, cfg.data)
    _, orth = orthogonal_residual(samples, cfg.data)
    inv = invariance_error(samples, state.action_x, eval_rng)
    h = state.history
    h["epoch"].append(state.epoch)
    h["loss"].append(last_loss)
    h["mode_freq"].append([float(f) for f in mode.freqs])
    h["min_mode_freq"].append(mode.min_mode_freq)
    h["orth_median"].append(orth["median"])
    h["orth_p90"].append(orth["p90"])
    h["inv_ed"].append(inv["ed"])
    h["inv_null_lo"].append(inv["null_lo"])
    h["inv_null_hi"].append(inv["null_hi"])


def train(config: GanConfig, state: TrainState | None = None) -> TrainState:
    """Run the full adversarial loop; deterministic given the config seed.

    An epoch is ceil(n_train / batch) iterations of (d_steps_per_g
    discriminator updates, one generator update) on minibatches drawn with
    replacement from the fixed training set.
    """
    if state is None:
        state = init_state(config)
    cfg = state.config
    rng = np.random.default_rng((cfg.seed, 0x7EA1))
    gen, disc = state.generator, state.discriminator
    batch = min(cfg.batch, cfg.n_train)
    iters_per_epoch = math.ceil(cfg.n_train / batch)
    data = state.train_set.data
    last_loss = math.nan

    if state.epoch == 0 and not state.history["epoch"]:
        _evaluate(state, last_loss)

    for epoch in range(state.epoch, cfg.epochs):
        for _ in range(iters_per_epoch):
            for _ in range(cfg.d_steps_per_g):
                xr = data[rng.integers(cfg.n_train, size=batch)]
                z = rng.standard_normal((batch, cfg.noise_dim))
                xf = gen(z, rng=rng)
                pnodes = disc.make_param_nodes()
                obj = discriminator_objective(
                    cfg.loss, disc.apply(nn.constant(xr), pnodes),
                    disc.apply(nn.constant(xf), pnodes))
                if cfg.loss.uses_penalty and cfg.loss.lambda2 > 0:
                    gp = penalty_for(cfg.loss)(disc, pnodes, xr, xf, rng)
                    obj = nn.sub(obj, nn.scale(gp, cfg.loss.lambda2))
                d_loss = nn.scale(obj, -1.0)
                if not np.isfinite(d_loss.value):
                    raise TrainingAborted(
                        f"NaN discriminator loss at epoch {epoch}",
                        {"epoch": epoch, "net": "discriminator",
                         "params": disc.param_vector()})
                nn.adam_step(disc.params, _grad_arrays(d_loss, pnodes), cfg.lr_d)
                last_loss = float(obj.value)

            z = rng.standard_normal((batch, cfg.noise_dim))
            g_pnodes = gen.make_param_nodes()
            d_frozen = disc.make_param_nodes(trainable=False)
            fake = gen.apply(nn.constant(z), g_pnodes, rng=rng)
            g_loss = generator_objective(cfg.loss, disc.apply(fake, d_frozen))
            if not np.isfinite(g_loss.value):
                raise TrainingAborted(
                    f"NaN generator loss at epoch {epoch}",
                    {"epoch": epoch, "net": "generator",
                     "params": gen.param_vector()})
            nn.adam_step(gen.params, _grad_arrays(g_loss, g_pnodes), cfg.lr_g)
            state.ema = cfg.ema_alpha * state.ema + (1.0 - cfg.ema_alpha) * gen.param_vector()
            state.ema_steps += 1

        state.epoch = epoch + 1
        if state.epoch % cfg.eval_interval == 0 or state.epoch == cfg.epochs:
            _evaluate(state, last_loss)

    return state


def config_from_dict(d: dict) -> GanConfig:
    """Build a GanConfig from a plain JSON dict (nested loss/data sections)."""
    d = dict(d)
    loss = LossSpec(**d.pop("loss", {}))
    data = TMixtureConfig(**d.pop("data", {}))
    return GanConfig(loss=loss, data=data, **d)
