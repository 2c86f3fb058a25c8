"""The hypernetwork autoencoder.

encoder E:     per-point perceptron, max over the set, head -> (mu, logvar)
decoder H:     perceptron z -> theta, the flat weight vector of the target net
target T_theta: perceptron R^3 -> R^3 applied to every prior sample

All networks are evaluated on an autodiff `Tape`; the numeric entry points
(`encode`, `hyper_decode`, `target_forward`) build a throwaway tape with
constant leaves.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm.auto import tqdm

from hypercloud.autodiff import Tape
from hypercloud.config import TrainConfig
from hypercloud.errors import CheckpointError, DivergenceError, DomainError, ShapeError
from hypercloud.geometry import PointCloud, as_cloud, make_rng, sample_ball
from hypercloud.optim import Adam
from hypercloud.setdist import chamfer_node, emd_node, warn_if_large

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOGVAR_CLAMP = 20.0
# Final decoder layer starts at 1/100 of the fan-in bound so initial theta is
# small and early target outputs stay near the origin.
DECODER_OUT_INIT_SCALE = 0.01


def param_count(widths) -> int:
    widths = list(widths)
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


@dataclass(frozen=True)
class TargetArch:
    """Target network layer widths; relu on hidden layers, identity output.

    theta is laid out layer by layer: the (in, out) weight matrix row-major,
    then the out-sized bias.
    """

    widths: tuple[int, ...] = (3, 32, 64, 128, 64, 3)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or self.widths[0] != 3 or self.widths[-1] != 3:
            raise ValueError(f"target widths must start and end with 3, got {list(self.widths)}")

    @property
    def param_count(self) -> int:
        return param_count(self.widths)

    def layers(self):
        """Yield (weight slice, weight shape, bias slice) per layer."""
        offset = 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            w = slice(offset, offset + a * b)
            bias = slice(offset + a * b, offset + a * b + b)
            yield w, (a, b), bias
            offset += a * b + b


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray


@dataclass
class HyperModel:
    latent_dim: int
    arch: TargetArch
    encoder_widths: tuple[int, ...]
    encoder_head: tuple[int, ...]
    decoder_hidden: tuple[int, ...]
    params: dict[str, np.ndarray]

    def __post_init__(self):
        self.encoder_widths = tuple(self.encoder_widths)
        self.encoder_head = tuple(self.encoder_head)
        self.decoder_hidden = tuple(self.decoder_hidden)
        expected = self.shapes()
        missing = [k for k in expected if k not in self.params]
        if missing:
            raise ShapeError(f"model is missing parameters {missing}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        return (self.latent_dim, *self.decoder_hidden, self.arch.param_count)

    def shapes(self) -> dict[str, tuple]:
        return layer_shapes(self.latent_dim, self.arch, self.encoder_widths, self.encoder_head, self.decoder_hidden)

    def size(self) -> int:
        return sum(p.size for p in self.params.values())


def _dense(prefix: str, widths) -> dict[str, tuple]:
    shapes = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        shapes[f"{prefix}.{i}.w"] = (a, b)
        shapes[f"{prefix}.{i}.b"] = (b,)
    return shapes


def layer_shapes(latent_dim: int, arch: TargetArch, encoder_widths, encoder_head, decoder_hidden) -> dict[str, tuple]:
    """Ordered parameter names and shapes."""
    head_out = encoder_head[-1]
    shapes = {}
    shapes.update(_dense("enc", encoder_widths))
    shapes.update(_dense("head", encoder_head))
    shapes["mu.w"] = (head_out, latent_dim)
    shapes["mu.b"] = (latent_dim,)
    shapes["logvar.w"] = (head_out, latent_dim)
    shapes["logvar.b"] = (latent_dim,)
    shapes.update(_dense("dec", (latent_dim, *decoder_hidden, arch.param_count)))
    return shapes


def init_model(
    latent_dim: int = 64,
    arch: TargetArch = TargetArch(),
    encoder_widths=(3, 64, 128, 256),
    encoder_head=(256, 128),
    decoder_hidden=(256, 512),
    rng: np.random.Generator | None = None,
) -> HyperModel:
    """Fan-in uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = rng if rng is not None else make_rng(0)
    if encoder_head[0] != encoder_widths[-1]:
        raise ValueError("encoder_head must start with the last encoder width")
    shapes = layer_shapes(latent_dim, arch, encoder_widths, encoder_head, decoder_hidden)

    last_dec = f"dec.{len(decoder_hidden)}"
    params = {}
    for name, shape in shapes.items():
        fan_in = shapes[name[:-1] + "w"][0]
        bound = 1.0 / math.sqrt(fan_in)
        if name.startswith(last_dec + "."):
            bound *= DECODER_OUT_INIT_SCALE
        params[name] = rng.uniform(-bound, bound, size=shape)
    return HyperModel(latent_dim, arch, tuple(encoder_widths), tuple(encoder_head), tuple(decoder_hidden), params)


def model_from_config(cfg: TrainConfig, rng: np.random.Generator) -> HyperModel:
    return init_model(
        cfg.latent_dim, TargetArch(cfg.target_widths), cfg.encoder_widths,
        cfg.encoder_head, cfg.decoder_hidden, rng,
    )


# --- Graph builders ---


def bind(tape: Tape, model: HyperModel, trainable: bool = True) -> dict[str, int]:
    return {name: tape.leaf(value, requires_grad=trainable) for name, value in model.params.items()}


def _mlp(tape: Tape, p: dict, prefix: str, x: int, n_layers: int, relu_last: bool) -> int:
    for i in range(n_layers):
        x = tape.linear(x, p[f"{prefix}.{i}.w"], p[f"{prefix}.{i}.b"])
        if relu_last or i < n_layers - 1:
            x = tape.relu(x)
    return x


def encode_node(tape: Tape, model: HyperModel, p: dict, pc: PointCloud) -> tuple[int, int]:
    """(mu, logvar) nodes, each of shape (1, D)."""
    x = tape.const(pc)
    x = _mlp(tape, p, "enc", x, len(model.encoder_widths) - 1, relu_last=True)
    pooled = tape.reshape(tape.max(x), (1, model.encoder_widths[-1]))
    h = _mlp(tape, p, "head", pooled, len(model.encoder_head) - 1, relu_last=True)
    mu = tape.linear(h, p["mu.w"], p["mu.b"])
    logvar = tape.linear(h, p["logvar.w"], p["logvar.b"])
    return mu, logvar


def clamp_node(tape: Tape, x: int, bound: float = LOGVAR_CLAMP) -> int:
    """Clamp to [-bound, bound] with zero gradient outside, built as
    x * inside + clipped * (1 - inside)."""
    v = tape.value(x)
    inside = (np.abs(v) <= bound).astype(np.float64)
    if inside.all():
        return x
    outside_value = np.clip(v, -bound, bound) * (1.0 - inside)
    return tape.add(tape.mul(x, tape.const(inside)), tape.const(outside_value))


def reparameterize_node(tape: Tape, mu: int, logvar: int, eps: np.ndarray) -> int:
    std = tape.exp(tape.scale(clamp_node(tape, logvar), 0.5))
    return tape.add(mu, tape.mul(std, tape.const(eps)))


def kld_node(tape: Tape, mu: int, logvar: int) -> int:
    lv = clamp_node(tape, logvar)
    shape = tape.value(mu).shape
    terms = tape.add(tape.exp(lv), tape.mul(mu, mu))
    terms = tape.add(terms, tape.negate(lv))
    terms = tape.add(terms, tape.const(np.full(shape, -1.0)))
    return tape.scale(tape.sum(terms), 0.5)


def decode_node(tape: Tape, model: HyperModel, p: dict, z: int) -> int:
    """(B, D) latent rows -> (B, param_count) theta rows."""
    return _mlp(tape, p, "dec", z, len(model.decoder_hidden) + 1, relu_last=False)


def target_node(tape: Tape, arch: TargetArch, theta: int, points: int) -> int:
    """Apply T_theta to every row of `points`; `theta` is a (param_count,) node."""
    n = tape.value(theta).shape
    if n != (arch.param_count,):
        raise ShapeError(f"theta has shape {n}, arch {list(arch.widths)} needs ({arch.param_count},)")
    x = points
    layers = list(arch.layers())
    for i, (w_slice, w_shape, b_slice) in enumerate(layers):
        w = tape.reshape(tape.slice(theta, w_slice), w_shape)
        b = tape.slice(theta, b_slice)
        x = tape.linear(x, w, b)
        if i < len(layers) - 1:
            x = tape.relu(x)
    return x


# --- Numeric entry points ---


def encode(model: HyperModel, pc: PointCloud) -> LatentCode:
    """Deterministic encoding; z is set to mu."""
    pc = as_cloud(pc)
    tape = Tape()
    mu, logvar = encode_node(tape, model, bind(tape, model, trainable=False), pc)
    mu_v = tape.value(mu)[0].copy()
    return LatentCode(mu_v, tape.value(logvar)[0].copy(), mu_v.copy())


def reparameterize(code: LatentCode, rng: np.random.Generator | None, deterministic: bool = False) -> np.ndarray:
    mu = np.asarray(code.mu, dtype=np.float64)
    logvar = np.asarray(code.logvar, dtype=np.float64)
    if np.any(np.isnan(mu)) or np.any(np.isnan(logvar)) or not np.all(np.isfinite(mu)):
        raise DomainError("latent code is not finite")
    if deterministic:
        return mu.copy()
    logvar = np.clip(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)


def hyper_decode(model: HyperModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"z has shape {z.shape}, expected ({model.latent_dim},)")
    tape = Tape()
    theta = decode_node(tape, model, bind(tape, model, trainable=False), tape.const(z[None, :]))
    return tape.value(theta)[0].copy()


def target_forward(arch: TargetArch, theta, points) -> PointCloud:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (arch.param_count,):
        raise ShapeError(f"theta has length {theta.size}, arch {list(arch.widths)} needs {arch.param_count}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must have shape (N, 3), got {pts.shape}")
    tape = Tape()
    out = target_node(tape, arch, tape.const(theta), tape.const(pts))
    return tape.value(out).copy()


def kld(mu, logvar) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    return float(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar))


# --- Loss ---


@dataclass(frozen=True)
class LossTerms:
    total: float
    err: float
    kl: float


@dataclass(frozen=True)
class _LossGraph:
    total: int
    err: int
    kl: int


def _loss_graph(
    tape: Tape, model: HyperModel, p: dict, clouds: list[PointCloud], cfg: TrainConfig,
    rng: np.random.Generator,
) -> _LossGraph:
    """Batch loss: mean over clouds of Err + lambda * KL.

    Random draws per cloud, in order: D normals for the latent, then the
    prior samples for the target network.
    """
    zs, kls, priors = [], [], []
    for pc in clouds:
        mu, logvar = encode_node(tape, model, p, pc)
        eps = rng.standard_normal((1, model.latent_dim))
        zs.append(reparameterize_node(tape, mu, logvar, eps))
        kls.append(kld_node(tape, mu, logvar))
        priors.append(sample_ball(cfg.prior_samples or len(pc), rng))

    thetas = decode_node(tape, model, p, zs[0] if len(zs) == 1 else tape.concat(zs, axis=0))
    distance = chamfer_node if cfg.loss == "cd" else emd_node
    errs = []
    for i, (pc, prior) in enumerate(zip(clouds, priors)):
        theta = tape.slice(thetas, i)
        out = target_node(tape, model.arch, theta, tape.const(prior))
        errs.append(distance(tape, out, pc))

    def mean(ids):
        acc = ids[0]
        for i in ids[1:]:
            acc = tape.add(acc, i)
        return acc if len(ids) == 1 else tape.scale(acc, 1.0 / len(ids))

    err = mean(errs)
    kl = mean(kls)
    total = tape.add(err, tape.scale(kl, cfg.kl_weight))
    return _LossGraph(total, err, kl)


def loss(model: HyperModel, pc: PointCloud, cfg: TrainConfig, rng: np.random.Generator) -> LossTerms:
    """Err(pc, T_theta(prior)) + lambda * KL for a single cloud."""
    return batch_loss(model, [pc], cfg, rng)


def batch_loss(model: HyperModel, clouds: list[PointCloud], cfg: TrainConfig, rng: np.random.Generator) -> LossTerms:
    tape = Tape()
    g = _loss_graph(tape, model, bind(tape, model, trainable=False), [as_cloud(c) for c in clouds], cfg, rng)
    return LossTerms(float(tape.value(g.total)), float(tape.value(g.err)), float(tape.value(g.kl)))


def loss_and_grads(
    model: HyperModel, clouds: list[PointCloud], cfg: TrainConfig, rng: np.random.Generator,
) -> tuple[LossTerms, dict[str, np.ndarray]]:
    tape = Tape()
    p = bind(tape, model)
    g = _loss_graph(tape, model, p, clouds, cfg, rng)
    terms = LossTerms(float(tape.value(g.total)), float(tape.value(g.err)), float(tape.value(g.kl)))
    if not np.isfinite(terms.total):
        return terms, {}
    leaf_grads = tape.backward(g.total)
    return terms, {name: leaf_grads[i] for name, i in p.items()}


def reconstruct(model: HyperModel, pc: PointCloud, n: int, rng: np.random.Generator) -> PointCloud:
    theta = hyper_decode(model, encode(model, pc).mu)
    return target_forward(model.arch, theta, sample_ball(n, rng))


# --- Training ---


@dataclass(frozen=True)
class StepRecord:
    step: int
    total: float
    err: float
    kl: float


def train(
    dataset: list[PointCloud],
    cfg: TrainConfig,
    model: HyperModel | None = None,
    progress: bool | None = None,
) -> tuple[HyperModel, list[StepRecord]]:
    """Minimize Err + lambda * KL with Adam over random mini-batches.

    Records are taken before each update, so record 0 is the loss of the
    initial model. Raises DivergenceError on a non-finite loss.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    clouds = [as_cloud(c, f"cloud {i}") for i, c in enumerate(dataset)]
    rng = make_rng(cfg.seed)
    if model is None:
        model = model_from_config(cfg, rng)
    if progress is None:
        progress = log.isEnabledFor(logging.INFO)

    if cfg.loss == "emd":
        warn_if_large(max(len(c) for c in clouds))
    optimizer = Adam(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    batch = min(cfg.batch_size, len(clouds))
    log.info(
        "Training on %d clouds: %d steps, batch %d, loss %s, lambda %g, %d parameters",
        len(clouds), cfg.steps, batch, cfg.loss, cfg.kl_weight, model.size(),
    )

    history: list[StepRecord] = []
    order = rng.permutation(len(clouds))
    cursor = 0
    for step in tqdm(range(cfg.steps), desc="train", disable=not progress):
        if cursor + batch > len(order):
            order = rng.permutation(len(clouds))
            cursor = 0
        idx = order[cursor:cursor + batch]
        cursor += batch

        try:
            terms, grads = loss_and_grads(model, [clouds[i] for i in idx], cfg, rng)
        except DomainError as e:
            raise DivergenceError(step, float("nan")) from e
        if not np.isfinite(terms.total):
            raise DivergenceError(step, terms.total)
        history.append(StepRecord(step, terms.total, terms.err, terms.kl))
        optimizer.step(grads)

        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.info("step %d: total %.6g err %.6g kl %.6g", step, terms.total, terms.err, terms.kl)
    return model, history


def write_history_csv(history: list[StepRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "total", "err", "kl"])
        for r in history:
            writer.writerow([r.step, repr(r.total), repr(r.err), repr(r.kl)])


# --- Checkpoints ---


def save_checkpoint(model: HyperModel, path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "latent_dim": model.latent_dim,
        "target_widths": list(model.arch.widths),
        "encoder_widths": list(model.encoder_widths),
        "encoder_head": list(model.encoder_head),
        "decoder_hidden": list(model.decoder_hidden),
        # json writes floats with repr, the shortest exact round-trip form
        "weights": {name: value.ravel().tolist() for name, value in model.params.items()},
    }
    try:
        Path(path).write_text(json.dumps(doc), encoding="utf-8")
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> HyperModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"Checkpoint {path} is not valid JSON (truncated?): {e}") from e
    if not isinstance(doc, dict):
        raise CheckpointError(f"Checkpoint {path} must be a JSON object")

    for key in ("format_version", "latent_dim", "target_widths", "encoder_widths",
                "encoder_head", "decoder_hidden", "weights"):
        if key not in doc:
            raise CheckpointError(f"Checkpoint {path} is missing field '{key}'")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has format version {doc['format_version']}, expected {CHECKPOINT_VERSION}"
        )

    try:
        arch = TargetArch(tuple(doc["target_widths"]))
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"Checkpoint {path}: {e}") from e

    latent_dim = int(doc["latent_dim"])
    encoder_widths = tuple(doc["encoder_widths"])
    encoder_head = tuple(doc["encoder_head"])
    decoder_hidden = tuple(doc["decoder_hidden"])

    params = {}
    weights = doc["weights"]
    for name, shape in layer_shapes(latent_dim, arch, encoder_widths, encoder_head, decoder_hidden).items():
        if name not in weights:
            raise CheckpointError(f"Checkpoint {path} is missing weights '{name}'")
        flat = np.asarray(weights[name], dtype=np.float64)
        expected = int(np.prod(shape))
        if flat.ndim != 1 or flat.size != expected:
            raise CheckpointError(
                f"Checkpoint {path}: '{name}' has {flat.size} values, declared widths need {expected}"
            )
        params[name] = flat.reshape(shape)

    return HyperModel(latent_dim, arch, encoder_widths, encoder_head, decoder_hidden, params)
