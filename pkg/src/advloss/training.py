"""The DANTest engine: adversarial training of a classifier against a pair critic.

One iteration updates the discriminator once and the generator once with Adam.
The discriminator maximizes eps*E[f(D(x, y))] + E[g(D(x, G(x)))] over real
pairs (image, true label) and fake pairs (image, predicted label), minus any
gradient penalty; the generator minimizes E[h(D(x, G(x)))]. Fake labels enter
the discriminator objective as constants; the generator only receives
gradients through its own objective. Every 100 steps (configurable) the
generator's test error rate is recorded. Non-finite losses or gradients abort
the run and are recorded as data, not raised.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .data import DatasetVariant, make_variant, subsample
from .losses import epsilon_weighted, get_loss, with_generator_variant
from .models import NUM_CLASSES, build_discriminator, build_generator


class PenaltyKind(Enum):
    COUPLED = "coupled"
    LOCAL = "local"
    R1 = "r1"
    R2 = "r2"
    NONE = "none"


class PenaltySide(Enum):
    TWO_SIDE = "two_side"
    ONE_SIDE = "one_side"


@dataclass(frozen=True)
class PenaltySpec:
    """Which gradient penalty to add to the discriminator objective.

    ``one_side_raw`` switches the one-side form from the squared hinge
    max(0, ||grad|| - k)^2 to the literal max(||grad||, k); the two differ
    only by a constant in the region below k, so gradients agree.
    """

    kind: PenaltyKind = PenaltyKind.NONE
    side: PenaltySide = PenaltySide.TWO_SIDE
    lam: float = 10.0
    k: float = 1.0
    c: float = 0.01
    one_side_raw: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind(self.kind))
        object.__setattr__(self, "side", PenaltySide(self.side))
        if self.lam < 0:
            raise ValueError("penalty weight must be >= 0")
        if not self.k > 0:
            raise ValueError("Lipschitz target must be > 0")
        if not self.c > 0:
            raise ValueError("local noise scale must be > 0")

    def to_dict(self):
        return {"kind": self.kind.value, "side": self.side.value, "lam": self.lam,
                "k": self.k, "c": self.c, "one_side_raw": self.one_side_raw}


NO_PENALTY = PenaltySpec(kind=PenaltyKind.NONE, lam=0.0)


@dataclass(frozen=True)
class DanConfig:
    loss: str = "classic_nonsaturating"
    generator_variant: str | None = None
    epsilon: float = 1.0
    penalty: PenaltySpec = NO_PENALTY
    spectral_norm: bool = False
    alpha: float = 0.001
    beta1_g: float = 0.0
    beta1_d: float = 0.0
    beta2: float = 0.9
    batch_size: int = 64
    steps: int = 100000
    eval_every: int = 100
    dataset_variant: str = "standard"
    subset: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size <= 0:
            raise ValueError("batch size must be > 0")
        if self.eval_every <= 0:
            raise ValueError("eval_every must be > 0")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["penalty"] = self.penalty.to_dict()
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    """Evaluation trajectory of one training run."""

    config_hash: str
    series: list = field(default_factory=list)   # (step, error) pairs
    final_error: float = float("nan")
    wall_time: float = 0.0
    fault: dict | None = None

    def same_trajectory(self, other):
        """Equality of everything deterministic (wall time excluded)."""
        return (self.config_hash == other.config_hash
                and self.series == other.series
                and self.final_error == other.final_error
                and self.fault == other.fault)


def save_run(record, out_dir, config=None):
    """Write <hash>.csv (step,error) and <hash>.json next to each other."""
    out_dir = str(out_dir)
    base = f"{out_dir}/{record.config_hash}"
    with open(base + ".csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "error"])
        for step, err in record.series:
            w.writerow([step, repr(err)])
    summary = {
        "config_hash": record.config_hash,
        "final_error": record.final_error,
        "wall_time": record.wall_time,
        "fault": record.fault,
        "series_length": len(record.series),
    }
    if config is not None:
        summary["config"] = config.to_dict()
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return base + ".csv", base + ".json"


def load_run(out_dir, config_hash):
    base = f"{out_dir}/{config_hash}"
    with open(base + ".json", encoding="utf-8") as fh:
        summary = json.load(fh)
    series = []
    with open(base + ".csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            series.append((int(row["step"]), float(row["error"])))
    return RunRecord(config_hash=summary["config_hash"], series=series,
                     final_error=summary["final_error"],
                     wall_time=summary["wall_time"], fault=summary["fault"])


class Adam:
    def __init__(self, params, alpha=0.001, beta1=0.0, beta2=0.9, eps=1e-8):
        self.params = list(params)
        self.alpha, self.beta1, self.beta2, self.eps = alpha, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            gd = g.data if isinstance(g, ad.Tensor) else g
            m *= b1
            m += (1.0 - b1) * gd
            v *= b2
            v += (1.0 - b2) * gd * gd
            p.data -= self.alpha * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# objectives


def _batch_mean(fun, scores):
    return ad.mean(fun(scores))


def relativistic_scores(loss_kind, real_scores, fake_scores):
    """(d_loss, g_loss) for the batch-coupled relativistic losses.

    Scores are centered on the mean of the opposite batch; the average variant
    applies the logistic loss to the centered scores, the hinge variant a unit
    margin. The generator loss swaps the real/fake roles.
    """
    real_scores, fake_scores = ad.astensor(real_scores), ad.astensor(fake_scores)
    r_cent = ad.sub(real_scores, ad.mean(fake_scores))
    f_cent = ad.sub(fake_scores, ad.mean(real_scores))
    if loss_kind == "relativistic":
        d = ad.add(ad.mean(ad.softplus(ad.scale(r_cent, -1.0))), ad.mean(ad.softplus(f_cent)))
        g = ad.add(ad.mean(ad.softplus(ad.scale(f_cent, -1.0))), ad.mean(ad.softplus(r_cent)))
    elif loss_kind == "relativistic_hinge":
        d = ad.add(ad.mean(ad.relu(ad.sub(1.0, r_cent))), ad.mean(ad.relu(ad.add(1.0, f_cent))))
        g = ad.add(ad.mean(ad.relu(ad.sub(1.0, f_cent))), ad.mean(ad.relu(ad.add(1.0, r_cent))))
    else:
        raise ValueError(f"not a relativistic loss: {loss_kind!r}")
    return d, g


def sample_penalty_points(kind, real_pair, fake_pair, c, rng):
    """Draw the (image, label) points where the gradient penalty is enforced."""
    kind = PenaltyKind(kind)
    r_img, r_lab = real_pair
    f_img, f_lab = fake_pair
    if kind is PenaltyKind.COUPLED:
        u = rng.uniform(0.0, 1.0, size=len(r_img))
        ui = u.reshape(-1, 1, 1, 1)
        ul = u.reshape(-1, 1)
        return r_img + ui * (f_img - r_img), r_lab + ul * (f_lab - r_lab)
    if kind is PenaltyKind.LOCAL:
        return (r_img + c * rng.standard_normal(r_img.shape),
                r_lab + c * rng.standard_normal(r_lab.shape))
    if kind is PenaltyKind.R1:
        return r_img, r_lab
    if kind is PenaltyKind.R2:
        return f_img, f_lab
    raise ValueError("no penalty points for PenaltyKind.NONE")


def penalty_term(spec, d_model, points, train=True):
    """lam * E[R(||grad_input D||)] over the penalty batch, differentiable in D.

    The gradient is taken w.r.t. the full (image, label) input pair and the
    norm is the Euclidean norm of the concatenated per-sample gradient. R1/R2
    apply R(x) = x to the squared norm; the coupled/local penalties use
    (||.|| - k)^2 (two-side) or its hinged version (one-side).
    """
    img = ad.constant(points[0])
    lab = ad.constant(points[1])
    scores = d_model.forward(img, lab, train)
    total = ad.sum_axes(scores, (0, 1))
    g_img, g_lab = ad.grad(total, [img, lab], create_higher=True)
    sq = ad.add(ad.sum_axes(ad.mul(g_img, g_img), (1, 2, 3)),
                ad.sum_axes(ad.mul(g_lab, g_lab), (1,)))
    if spec.kind in (PenaltyKind.R1, PenaltyKind.R2):
        return ad.scale(ad.mean(sq), spec.lam)
    norm = ad.sqrt(ad.add(sq, 1e-12))
    if spec.side is PenaltySide.TWO_SIDE:
        r = ad.square(ad.sub(norm, spec.k))
    elif spec.one_side_raw:
        r = ad.add(ad.relu(ad.sub(norm, spec.k)), spec.k)   # max(||.||, k)
    else:
        r = ad.square(ad.relu(ad.sub(norm, spec.k)))
    return ad.scale(ad.mean(r), spec.lam)


def d_loss(batch_real, loss, g_model, d_model, penalty=NO_PENALTY, rng=None, train=True):
    """Discriminator minimization objective on one real batch.

    Fake pairs are (real image, generator label) with the label detached, so
    no gradient reaches the generator here.
    """
    images, labels = batch_real
    img = ad.constant(images)
    lab = ad.constant(labels)
    fake_lab = g_model.forward(img, train).detach()
    s_real = d_model.forward(img, lab, train)
    s_fake = d_model.forward(img, fake_lab, train)
    if loss.pointwise:
        f_term = _batch_mean(loss.f, s_real)
        if loss.epsilon != 1.0:
            f_term = ad.scale(f_term, loss.epsilon)
        base = ad.scale(ad.add(f_term, _batch_mean(loss.g, s_fake)), -1.0)
    else:
        base, _ = relativistic_scores(loss.name, s_real, s_fake)
    if penalty.kind is not PenaltyKind.NONE and penalty.lam > 0:
        pts = sample_penalty_points(penalty.kind, (images, labels),
                                    (images, fake_lab.data), penalty.c, rng)
        base = ad.add(base, penalty_term(penalty, d_model, pts, train))
    return base


def g_loss(batch_real, loss, g_model, d_model, train=True):
    """Generator minimization objective; gradients flow through its softmax."""
    images, labels = batch_real
    img = ad.constant(images)
    fake_lab = g_model.forward(img, train)
    s_fake = d_model.forward(img, fake_lab, train)
    if loss.pointwise:
        return _batch_mean(loss.h, s_fake)
    s_real = d_model.forward(img, ad.constant(labels), train)
    _, g_term = relativistic_scores(loss.name, s_real, s_fake)
    return g_term


# ---------------------------------------------------------------------------
# training loop


def one_hot(labels):
    eye = np.eye(NUM_CLASSES)
    return eye[np.asarray(labels, dtype=np.int64)]


def evaluate(g_model, test, batch=2000):
    """Fraction of test samples whose argmax prediction misses the label.

    Runs the generator in eval mode (batch-norm running statistics); argmax
    ties resolve to the lowest class index.
    """
    images = test.images.reshape(-1, 28, 28, 1)
    wrong = 0
    for lo in range(0, len(images), batch):
        hi = min(lo + batch, len(images))
        probs = g_model.forward(ad.constant(images[lo:hi]), train=False).data
        pred = np.argmax(probs, axis=1)
        wrong += int(np.sum(pred != test.labels[lo:hi]))
    return wrong / len(images)


def resolve_loss(config):
    loss = get_loss(config.loss)
    if config.epsilon != 1.0:
        loss = epsilon_weighted(loss, config.epsilon)
    if config.generator_variant is not None:
        loss = with_generator_variant(loss, config.generator_variant)
    return loss


def prepare_dataset(standard, config):
    """Apply the configured variant and optional subset to a training set."""
    ds = make_variant(standard, DatasetVariant(config.dataset_variant), seed=config.seed)
    if config.subset is not None:
        ds = subsample(ds, config.subset, seed=config.seed)
    return ds


def train(config, data, test):
    """Run the full alternating loop and return the error-rate trajectory.

    Faults (non-finite loss or gradients) abort the run and are recorded on
    the RunRecord; a divergent run is a result, not an exception.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    loss = resolve_loss(config)
    g_model = build_generator(rng)
    d_model = build_discriminator(rng, spectral_norm=config.spectral_norm)
    adam_g = Adam(g_model.params(), config.alpha, config.beta1_g, config.beta2)
    adam_d = Adam(d_model.params(), config.alpha, config.beta1_d, config.beta2)

    images = data.images.reshape(-1, 28, 28, 1)
    labels = one_hot(data.labels)
    n = len(images)

    record = RunRecord(config_hash=config.config_hash())
    fault = None
    last_step = 0
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, n, size=config.batch_size)
        batch = (images[idx], labels[idx])
        try:
            dl = d_loss(batch, loss, g_model, d_model, config.penalty, rng)
            dl.check_finite("d_loss", step=step)
            d_grads = ad.grad(dl, d_model.params())
            for g in d_grads:
                g.check_finite("d gradient", step=step)
            adam_d.step(d_grads)

            gl = g_loss(batch, loss, g_model, d_model)
            gl.check_finite("g_loss", step=step)
            g_grads = ad.grad(gl, g_model.params())
            for g in g_grads:
                g.check_finite("g gradient", step=step)
            adam_g.step(g_grads)
        except ad.FaultFlag as e:
            fault = {"step": step, "reason": str(e)}
            break
        last_step = step
        if step % config.eval_every == 0:
            record.series.append((step, evaluate(g_model, test)))

    if record.series and record.series[-1][0] == last_step and fault is None:
        record.final_error = record.series[-1][1]
    else:
        record.final_error = evaluate(g_model, test)
    record.fault = fault
    record.wall_time = time.perf_counter() - t0
    return record
