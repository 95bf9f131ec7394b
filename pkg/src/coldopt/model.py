"""Toy linear-Gaussian predictive VAE and the joint training loss.

The encoder is affine with a global per-dimension log-variance, the decoder is
affine, and the built-in predictor is linear in the latent code. The training
loss combines the negative ELBO (unit-variance Gaussian decoder, additive
constant dropped) with a squared predictor error, mixed by a weight ``beta``:

    total = beta * (recon + kl) + (1 - beta) * (w - f(z))^2

With beta = 1 the predictor term is switched off. Training is deterministic,
using z = mu instead of a reparameterised sample.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

LOGVAR_MIN, LOGVAR_MAX = -30.0, 30.0

_TINY = np.finfo(np.float64).tiny
_ONE_MINUS_EPS = 1.0 - np.finfo(np.float64).eps


def _sigmoid(a):
    # expit saturates to exactly 0/1 for |a| beyond ~745; clamp back into the
    # open interval so the output stays in (0, 1) for every finite input
    return np.clip(expit(a), _TINY, _ONE_MINUS_EPS)


_ACTIVATIONS = {
    "relu": lambda a: np.maximum(a, 0.0),
    "sigmoid": _sigmoid,
    "identity": lambda a: a,
}


@dataclass
class ToyPvae:
    enc_weight: np.ndarray  # (D_latent, D_data)
    enc_bias: np.ndarray  # (D_latent,)
    enc_logvar: np.ndarray  # (D_latent,), clamped to [-30, 30]
    dec_weight: np.ndarray  # (D_data, D_latent)
    dec_bias: np.ndarray  # (D_data,)
    pred_weight: np.ndarray  # (D_latent,)
    pred_bias: float

    def __post_init__(self):
        for name in ("enc_weight", "enc_bias", "enc_logvar", "dec_weight", "dec_bias", "pred_weight"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, arr)
        self.enc_logvar = np.clip(self.enc_logvar, LOGVAR_MIN, LOGVAR_MAX)
        self.pred_bias = float(self.pred_bias)
        dl, dd = self.enc_weight.shape
        if self.dec_weight.shape != (dd, dl) or self.enc_bias.shape != (dl,) \
                or self.enc_logvar.shape != (dl,) or self.dec_bias.shape != (dd,) \
                or self.pred_weight.shape != (dl,):
            raise ValueError("model parameter shapes do not compose")

    @property
    def d_data(self):
        return self.enc_weight.shape[1]

    @property
    def d_latent(self):
        return self.enc_weight.shape[0]

    @classmethod
    def random(cls, d_data, d_latent, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        return cls(
            enc_weight=rng.normal(0, scale, (d_latent, d_data)),
            enc_bias=rng.normal(0, scale, d_latent),
            enc_logvar=rng.normal(0, scale, d_latent),
            dec_weight=rng.normal(0, scale, (d_data, d_latent)),
            dec_bias=rng.normal(0, scale, d_data),
            pred_weight=rng.normal(0, scale, d_latent),
            pred_bias=rng.normal(0, scale),
        )


def encode(model, x):
    """Posterior mean and variance of the encoding distribution q(z|x)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d_data,):
        raise ValueError(f"expected data vector of length {model.d_data}, got {x.shape}")
    mu = model.enc_weight @ x + model.enc_bias
    return mu, np.exp(model.enc_logvar)


def decode(model, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.d_latent,):
        raise ValueError(f"expected latent vector of length {model.d_latent}, got {z.shape}")
    return model.dec_weight @ z + model.dec_bias


def predict_linear(model, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.d_latent,):
        raise ValueError(f"expected latent vector of length {model.d_latent}, got {z.shape}")
    return float(model.pred_weight @ z + model.pred_bias)


@dataclass
class MlpPredictor:
    """Fully connected score predictor f(z); activations per layer."""

    layers: list  # of (weight (out, in), bias (out,))
    activations: list  # of "relu" | "sigmoid" | "identity"

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise ValueError("one activation tag per layer required")
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in self.layers]
        width = None
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight/bias shapes do not compose")
            if width is not None and w.shape[1] != width:
                raise ValueError(f"layer {i}: input width {w.shape[1]} != previous output {width}")
            width = w.shape[0]
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.layers[-1][0].shape[0] != 1:
            raise ValueError("final layer must have a single output")

    @property
    def d_in(self):
        return self.layers[0][0].shape[1]

    def __call__(self, z):
        return predict(self, z)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        try:
            layers = [(spec["w"], spec["b"]) for spec in doc["layers"]]
            acts = [spec["act"] for spec in doc["layers"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed predictor weights document") from exc
        return cls(layers, acts)

    def to_json(self, path):
        doc = {"layers": [
            {"w": w.tolist(), "b": b.tolist(), "act": act}
            for (w, b), act in zip(self.layers, self.activations)
        ]}
        with open(path, "w") as fh:
            json.dump(doc, fh)


def predict(pred, z):
    """Forward pass of an MlpPredictor; scalar output."""
    a = np.asarray(z, dtype=np.float64)
    if a.shape != (pred.d_in,):
        raise ValueError(f"expected latent vector of length {pred.d_in}, got {a.shape}")
    for (w, b), act in zip(pred.layers, pred.activations):
        a = _ACTIVATIONS[act](w @ a + b)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite intermediate value in predictor")
    return float(a[0])


def kl_to_standard_normal(mu, var):
    """KL(N(mu, diag(var)) || N(0, I)); nonnegative, zero only at (0, 1)."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise ValueError("variance must be strictly positive")
    return float(0.5 * np.sum(var + mu**2 - 1.0 - np.log(var)))


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    pred_sq_err: float
    beta: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.beta * (self.recon + self.kl) + (1.0 - self.beta) * self.pred_sq_err


def pvae_loss(model, x, w, z_sample, beta):
    """Joint loss at a caller-supplied latent sample (or the posterior mean)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    mu, var = encode(model, x)
    recon = 0.5 * float(np.sum((x - decode(model, z_sample)) ** 2))
    kl = kl_to_standard_normal(mu, var)
    err = (w - predict_linear(model, z_sample)) ** 2
    return LossBreakdown(recon=recon, kl=kl, pred_sq_err=err, beta=beta)


def pvae_loss_grad(model, x, w, beta):
    """Analytic gradient of the deterministic (z = mu) loss w.r.t. all parameters.

    Returns a dict keyed by parameter name with arrays shaped like the
    parameters.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    mu, var = encode(model, x)
    r = decode(model, mu) - x  # reconstruction residual
    f = predict_linear(model, mu)
    # d total / d mu, chained through recon, kl and predictor terms
    dmu = beta * (model.dec_weight.T @ r + mu) + (1.0 - beta) * 2.0 * (f - w) * model.pred_weight
    return {
        "enc_weight": np.outer(dmu, x),
        "enc_bias": dmu,
        "enc_logvar": beta * 0.5 * (var - 1.0),
        "dec_weight": beta * np.outer(r, mu),
        "dec_bias": beta * r,
        "pred_weight": (1.0 - beta) * 2.0 * (f - w) * mu,
        "pred_bias": np.float64((1.0 - beta) * 2.0 * (f - w)),
    }


class TrainingDivergedError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


def toy_train(dataset, steps=500, learning_rate=0.05, beta=0.5, seed=0, d_latent=2):
    """Full-batch gradient descent on the deterministic z = mu loss.

    ``dataset`` is a sequence of (x, w) pairs with uniform data dimension.
    Deterministic for a fixed seed; never increases the loss versus the
    random initialisation (falls back to the best parameters seen).
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    xs = np.asarray([np.asarray(x, dtype=np.float64) for x, _ in dataset])
    ws = np.asarray([float(w) for _, w in dataset])
    model = ToyPvae.random(xs.shape[1], d_latent, seed=seed)

    def mean_loss(m):
        return float(np.mean([
            pvae_loss(m, x, w, encode(m, x)[0], beta).total for x, w in zip(xs, ws)
        ]))

    best = model
    best_loss = mean_loss(model)
    names = ("enc_weight", "enc_bias", "enc_logvar", "dec_weight", "dec_bias", "pred_weight", "pred_bias")
    # overflow in a diverging run is expected and caught via the finite check
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            grads = [pvae_loss_grad(model, x, w, beta) for x, w in zip(xs, ws)]
            params = {}
            for name in names:
                g = np.mean([gr[name] for gr in grads], axis=0)
                params[name] = getattr(model, name) - learning_rate * g
            try:
                model = ToyPvae(**params)
            except ValueError:
                raise TrainingDivergedError(step)
            loss = mean_loss(model)
            if not np.isfinite(loss):
                raise TrainingDivergedError(step)
            if loss <= best_loss:
                best, best_loss = model, loss
    return best
