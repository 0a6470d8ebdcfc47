"""Regression models with Gamma-distributed precision and their losses.

``VvRegressor`` predicts a mean and a Gamma posterior q(lambda | x) over the
noise precision, which yields a Student-t predictive. Three variants share the
code path:

* ``d-vv``: in-distribution ELBO plus the prior KL at pseudo-inputs,
* ``vv``: in-distribution ELBO only,
* ``vv-no-prior``: expected log-likelihood without any KL term.

``MeanVarianceNet`` is the plain Gaussian baseline. Everything works in
standardized units; losses are means over the respective batches.
"""

from dataclasses import dataclass, field

import numpy as np

from .density import DiagGmm
from .dist import (
    GammaParams,
    expected_gaussian_loglik,
    expected_gaussian_loglik_grad,
    gamma_kl,
    gamma_kl_grad,
    student_t_from_gamma,
)
from .mathfun import LOG_2PI
from .nn import AdamState, Mlp, adam_step
from .pig import PigConfig, generate, init_from_data

VARIANTS = ("d-vv", "vv", "vv-no-prior")
MVN_VAR_FLOOR = 1e-6


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class DissipativeConfig:
    prior: GammaParams = GammaParams(1.5, 0.5)
    pig: PigConfig = PigConfig()
    variant: str = "d-vv"
    stage1_epochs: int = 200
    stage1_lr: float = 1e-3
    stage2_epochs: int = 200
    stage2_lr: float = 1e-3
    batch_size: int = 64
    freeze_mean: bool = True  # False fine-tunes the mean net jointly in stage 2
    pig_per_epoch: bool = False  # regenerate pseudo-inputs at every stage-2 epoch

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class VvRegressor:
    def __init__(self, d_in, d_out=1, hidden=(50,), prior=GammaParams(1.5, 0.5), rng=None, nets=None):
        sizes = [d_in, *hidden, d_out]
        if nets is None:
            nets = (
                Mlp(sizes, "identity", rng),
                Mlp(sizes, "softplus_shift1", rng),
                Mlp(sizes, "softplus", rng),
            )
        self.mu_net, self.alpha_net, self.beta_net = nets
        self.prior = prior

    @property
    def d_in(self):
        return self.mu_net.sizes[0]

    def posterior(self, x):
        """(mu, GammaParams) for a batch; arrays shaped (B, d_out)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.mu_net(x), GammaParams(self.alpha_net(x), self.beta_net(x))

    def to_dict(self):
        return {
            "kind": "vv",
            "prior": [np.asarray(self.prior.shape).tolist(), np.asarray(self.prior.rate).tolist()],
            "mu": self.mu_net.to_dict(),
            "alpha": self.alpha_net.to_dict(),
            "beta": self.beta_net.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj):
        nets = tuple(Mlp.from_dict(obj[k]) for k in ("mu", "alpha", "beta"))
        shape, rate = (np.asarray(v, dtype=np.float64) for v in obj["prior"])
        prior = GammaParams(float(shape) if shape.ndim == 0 else shape, float(rate) if rate.ndim == 0 else rate)
        return cls(nets[0].sizes[0], prior=prior, nets=nets)


class MeanVarianceNet:
    def __init__(self, d_in, d_out=1, hidden=(50,), rng=None, nets=None):
        sizes = [d_in, *hidden, d_out]
        if nets is None:
            nets = (Mlp(sizes, "identity", rng), Mlp(sizes, "softplus", rng))
        self.mu_net, self.var_net = nets

    def predict_gaussian(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.mu_net(x), self.var_net(x) + MVN_VAR_FLOOR

    def to_dict(self):
        return {"kind": "mvn", "mu": self.mu_net.to_dict(), "var": self.var_net.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        nets = (Mlp.from_dict(obj["mu"]), Mlp.from_dict(obj["var"]))
        return cls(nets[0].sizes[0], nets=nets)


def _as_2d(y):
    y = np.asarray(y, dtype=np.float64)
    return y[:, None] if y.ndim == 1 else y


# --- losses ------------------------------------------------------------------


def elbo_in(model: VvRegressor, x, y, variant="vv"):
    """Per-point ELBO (summed over target columns)."""
    y = _as_2d(y)
    mu, q = model.posterior(x)
    out = expected_gaussian_loglik(y, mu, q)
    if variant != "vv-no-prior":
        out = out - gamma_kl(q, model.prior)
    return np.sum(np.atleast_2d(out), axis=1)


@dataclass
class LossGrads:
    loss: float
    mu: dict = field(default_factory=dict)
    alpha: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)


def dissipative_loss(model: VvRegressor, x, y, x_ood=None, variant="d-vv", with_grads=True):
    """mean(-ELBO) over (x, y) plus mean prior KL over ``x_ood``.

    The OOD term is dropped for ``vv`` and both KL terms for ``vv-no-prior``.
    Returns a LossGrads whose dicts hold gradients for each net.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = _as_2d(y)
    b = x.shape[0]
    use_ood = variant == "d-vv" and x_ood is not None and len(x_ood) > 0
    use_kl = variant != "vv-no-prior"
    x_all = np.vstack([x, np.atleast_2d(x_ood)]) if use_ood else x

    mu, mu_tape = model.mu_net.forward(x)
    alpha, a_tape = model.alpha_net.forward(x_all)
    beta, b_tape = model.beta_net.forward(x_all)
    q_in = GammaParams(alpha[:b], beta[:b])

    loss = -np.sum(expected_gaussian_loglik(y, mu, q_in)) / b
    d_mu, d_a, d_b = expected_gaussian_loglik_grad(y, mu, q_in)
    g_mu, g_alpha, g_beta = -d_mu / b, -d_a / b, -d_b / b
    if use_kl:
        loss += np.sum(gamma_kl(q_in, model.prior)) / b
        ka, kb = gamma_kl_grad(q_in, model.prior)
        g_alpha, g_beta = g_alpha + ka / b, g_beta + kb / b
    if use_ood:
        k = x_all.shape[0] - b
        q_out = GammaParams(alpha[b:], beta[b:])
        loss += np.sum(gamma_kl(q_out, model.prior)) / k
        ka, kb = gamma_kl_grad(q_out, model.prior)
        g_alpha = np.vstack([g_alpha, ka / k])
        g_beta = np.vstack([g_beta, kb / k])
    out = LossGrads(float(loss))
    if with_grads:
        out.mu = model.mu_net.backward(mu_tape, g_mu)[0]
        out.alpha = model.alpha_net.backward(a_tape, g_alpha)[0]
        out.beta = model.beta_net.backward(b_tape, g_beta)[0]
    return out


def mse_loss(net: Mlp, x, y):
    y = _as_2d(y)
    pred, tape = net.forward(x)
    r = pred - y
    loss = float(np.mean(np.sum(r * r, axis=1)))
    grads, _ = net.backward(tape, 2.0 * r / x.shape[0])
    return loss, grads


def mvn_nll(model: MeanVarianceNet, x, y, with_grads=True):
    """Mean Gaussian negative log-likelihood and gradients for both nets."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = _as_2d(y)
    b = x.shape[0]
    mu, mu_tape = model.mu_net.forward(x)
    sp, v_tape = model.var_net.forward(x)
    var = sp + MVN_VAR_FLOOR
    r = y - mu
    loss = float(np.sum(0.5 * (LOG_2PI + np.log(var) + r * r / var)) / b)
    if not with_grads:
        return loss, None, None
    g_mu = model.mu_net.backward(mu_tape, -r / var / b)[0]
    g_var = model.var_net.backward(v_tape, 0.5 * (1.0 / var - r * r / (var * var)) / b)[0]
    return loss, g_mu, g_var


# --- training ----------------------------------------------------------------


@dataclass
class TrainLog:
    stage1: list = field(default_factory=list)
    stage2: list = field(default_factory=list)
    pseudo_inputs: np.ndarray = None
    pig_iterations: int = 0


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _check(loss, stage, epoch):
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss in {stage} at epoch {epoch}")


def fit_mean(net: Mlp, x, y, epochs, lr, batch_size, rng, log=None):
    """Stage 1: minibatch MSE training of a mean network."""
    x = np.asarray(x, dtype=np.float64)
    y = _as_2d(y)
    state = AdamState(lr=lr)
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(x), batch_size, rng):
            loss, grads = mse_loss(net, x[idx], y[idx])
            adam_step(net.params, grads, state)
            total += loss * len(idx)
        _check(total, "stage 1", epoch)
        if log is not None:
            log.append(total / len(x))
    return net


def make_pseudo_inputs(density, x, pig: PigConfig, rng):
    return generate(density, init_from_data(x, pig.count, rng), pig)


def fit_uncertainty(model: VvRegressor, x, y, cfg: DissipativeConfig, density: DiagGmm, rng, log=None, fixed_ood=None):
    """Stage 2: train the alpha and beta nets on the dissipative loss.

    For d-vv the pseudo-inputs come from the generator on ``density`` unless
    ``fixed_ood`` supplies a ready-made set. OOD minibatches are drawn from
    their own stream so the in-distribution batch order matches plain VV.
    """
    x = np.asarray(x, dtype=np.float64)
    y = _as_2d(y)
    log = log if log is not None else TrainLog()
    rng_pig, rng_batch, rng_ood = rng.spawn(3)
    x_ood = None
    if cfg.variant == "d-vv":
        if fixed_ood is not None:
            x_ood = np.asarray(fixed_ood, dtype=np.float64)
        elif density is None:
            raise ValueError("d-vv training needs an input density for the pseudo-input generator")
        else:
            pi = make_pseudo_inputs(density, x, cfg.pig, rng_pig)
            x_ood, log.pig_iterations = pi.points, pi.iterations
        log.pseudo_inputs = x_ood
    regenerate = cfg.pig_per_epoch and fixed_ood is None and x_ood is not None
    states = {name: AdamState(lr=cfg.stage2_lr) for name in ("mu", "alpha", "beta")}
    for epoch in range(cfg.stage2_epochs):
        if epoch > 0 and regenerate:
            x_ood = make_pseudo_inputs(density, x, cfg.pig, rng_pig).points
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, rng_batch):
            batch_ood = None
            if x_ood is not None:
                batch_ood = x_ood[rng_ood.integers(len(x_ood), size=len(idx))]
            res = dissipative_loss(model, x[idx], y[idx], batch_ood, cfg.variant)
            adam_step(model.alpha_net.params, res.alpha, states["alpha"])
            adam_step(model.beta_net.params, res.beta, states["beta"])
            if not cfg.freeze_mean:
                adam_step(model.mu_net.params, res.mu, states["mu"])
            total += res.loss * len(idx)
        _check(total, "stage 2", epoch)
        log.stage2.append(total / len(x))
    return model, log


def train_split(model: VvRegressor, x, y, cfg: DissipativeConfig, density: DiagGmm, rng):
    """Stage 1 (mean by MSE) followed by stage 2 (uncertainty nets).

    ``rng`` is split into one stream per stage, so two variants trained from
    the same generator state share a bitwise identical stage 1.
    """
    rng1, rng2 = rng.spawn(2)
    log = TrainLog()
    fit_mean(model.mu_net, x, y, cfg.stage1_epochs, cfg.stage1_lr, cfg.batch_size, rng1, log.stage1)
    fit_uncertainty(model, x, y, cfg, density, rng2, log)
    return model, log


def train_mvn(model: MeanVarianceNet, x, y, epochs, lr, batch_size, rng, log=None):
    x = np.asarray(x, dtype=np.float64)
    y = _as_2d(y)
    s_mu, s_var = AdamState(lr=lr), AdamState(lr=lr)
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(x), batch_size, rng):
            loss, g_mu, g_var = mvn_nll(model, x[idx], y[idx])
            adam_step(model.mu_net.params, g_mu, s_mu)
            adam_step(model.var_net.params, g_var, s_var)
            total += loss * len(idx)
        _check(total, "mvn", epoch)
        if log is not None:
            log.append(total / len(x))
    return model


# --- prediction and priors ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prediction:
    mean: np.ndarray
    variance: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    alpha: np.ndarray = None
    beta: np.ndarray = None

    @property
    def student_t(self):
        return student_t_from_gamma(self.mean, GammaParams(self.alpha, self.beta))


def predict(model, x) -> Prediction:
    """Predictive moments for a batch, arrays shaped (B, d_out).

    For the Gaussian baseline the whole variance is reported as aleatoric and
    the epistemic factor is 1.
    """
    if isinstance(model, MeanVarianceNet):
        mu, var = model.predict_gaussian(x)
        return Prediction(mu, var, var, np.ones_like(var))
    mu, q = model.posterior(x)
    alpha, beta = q.shape, q.rate
    aleatoric = beta / alpha
    epistemic = alpha / (alpha - 1.0)
    return Prediction(mu, beta / (alpha - 1.0), aleatoric, epistemic, alpha, beta)


def select_prior(mode, stat) -> GammaParams:
    """Gamma prior from a target scale statistic.

    ``toy``: stat is the target std s; rate 1e-3 and shape 1 + 1e-3 / s.
    ``empirical``: stat is the mean squared residual m of a mean-only fit;
    shape 1.5 and rate 0.5 m. Either way rate / (shape - 1) equals the stat.
    """
    if not np.isfinite(stat) or stat <= 0:
        raise ValueError(f"prior statistic must be finite and > 0, got {stat}")
    if mode == "toy":
        b = 1e-3
        return GammaParams(1.0 + b / stat, b)
    if mode == "empirical":
        return GammaParams(1.5, 0.5 * stat)
    raise ValueError(f"unknown prior mode {mode!r}")
