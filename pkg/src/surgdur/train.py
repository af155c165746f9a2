"""Training loops: baselines, homo- and heteroscedastic MLPs, grid search.

Heteroscedastic heads minimize their full NLL. Homoscedastic variants
minimize squared error (gaussian) or absolute error (laplace), which are
the fixed-scale maximum-likelihood objectives; their constant scale is
fitted afterwards on validation residuals. The learning rate halves every
`lr_halving_period_epochs`, and the reported parameters are the snapshot
with the best validation NLL.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import distributions as dist
from . import features as feat
from . import mlp as nn
from .exceptions import ConfigError, TrainingError

BUNDLE_FORMAT_VERSION = 1

LAYER_GRID = (1, 2, 3)
WIDTH_GRID = (128, 256, 384, 512)

MODEL_KINDS = ("current", "procedure_means", "linear", "mlp")


@dataclass(frozen=True)
class TrainConfig:
    family: str = "gaussian"
    heteroscedastic: bool = False
    hidden_layers: int = 1
    hidden_width: int = 128
    initial_lr: float = 0.1
    lr_halving_period_epochs: int = 50
    epochs: int = 200
    batch_size: int = 256
    dropout_rate: float = 0.2
    seed: int = 0
    allow_custom_width: bool = False

    def validate(self):
        if self.family not in dist.FAMILIES:
            raise ConfigError(f"family must be one of {dist.FAMILIES}, got {self.family!r}")
        if self.family == "gamma" and not self.heteroscedastic:
            raise ConfigError("family=gamma requires heteroscedastic=true; "
                              "the gamma head has no homoscedastic variant")
        if self.hidden_layers not in LAYER_GRID:
            raise ConfigError(f"hidden_layers must be in {LAYER_GRID}, got {self.hidden_layers}")
        if self.hidden_width not in WIDTH_GRID and not self.allow_custom_width:
            raise ConfigError(
                f"hidden_width {self.hidden_width} is outside the grid {WIDTH_GRID}; "
                "set allow_custom_width to override")
        if self.hidden_width < 1:
            raise ConfigError(f"hidden_width must be positive, got {self.hidden_width}")
        if self.initial_lr <= 0:
            raise ConfigError(f"initial_lr must be > 0, got {self.initial_lr}")
        if self.lr_halving_period_epochs < 1:
            raise ConfigError("lr_halving_period_epochs must be >= 1")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def effective_lr(config, epoch):
    """initial_lr * 0.5 ** floor(epoch / period), epochs 0-indexed."""
    return config.initial_lr * 0.5 ** (epoch // config.lr_halving_period_epochs)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    valid_nll: float


@dataclass
class TrainedModel:
    kind: str
    family: str | None = None
    heteroscedastic: bool = False
    net: nn.MlpModel | None = None
    proc_means: dict[str, float] | None = None
    global_mean_hours: float | None = None
    constant_scale: float | None = None
    history: list[EpochStats] = field(default_factory=list)
    best_valid_nll: float = float("nan")
    config: TrainConfig | None = None


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def train_procedure_means(train_records):
    """Predict each case by the mean train duration of its procedure.

    Unseen procedures fall back to the global train mean.
    """
    if not train_records:
        raise ConfigError("procedure-means baseline needs a nonempty training split")
    sums, counts = {}, {}
    total = 0.0
    for r in train_records:
        h = r.duration_minutes / 60.0
        sums[r.procedure_id] = sums.get(r.procedure_id, 0.0) + h
        counts[r.procedure_id] = counts.get(r.procedure_id, 0) + 1
        total += h
    means = {p: sums[p] / counts[p] for p in sums}
    return TrainedModel(kind="procedure_means", family="gaussian",
                        proc_means=means,
                        global_mean_hours=total / len(train_records))


def predict_procedure_means(model, records):
    return np.array([model.proc_means.get(r.procedure_id, model.global_mean_hours)
                     for r in records])


def current_method_model():
    """The booking heuristic itself: predictions come from scheduled_minutes."""
    return TrainedModel(kind="current", family="gaussian")


# ---------------------------------------------------------------------------
# Network training
# ---------------------------------------------------------------------------

def _homo_loss_grad(family, y, raw):
    """Squared / absolute error and gradient w.r.t. the single raw output."""
    pred = raw[:, 0]
    r = pred - y
    if family == "gaussian":
        return r @ r / len(y), (2.0 * r / len(y))[:, None]
    return np.abs(r).sum() / len(y), (np.sign(r) / len(y))[:, None]


def fit_constant_scale(family, residuals):
    """Exact NLL-minimizing constant scale from validation residuals.

    Gaussian: sigma = sqrt(mean(r^2)). Laplace: b = mean(|r|). Floored at
    the shared numeric floor so all-zero residuals stay usable.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.size == 0:
        raise ConfigError("cannot fit a constant scale on empty residuals")
    if family == "gaussian":
        scale = float(np.sqrt(np.mean(residuals**2)))
    elif family == "laplace":
        scale = float(np.mean(np.abs(residuals)))
    else:
        raise ConfigError(f"no constant-scale variant for family {family!r}")
    return max(scale, dist.SCALE_FLOOR)


def _homo_valid_nll(family, residuals):
    """Validation NLL at the per-epoch optimal constant scale (closed form)."""
    scale = fit_constant_scale(family, residuals)
    if family == "gaussian":
        return float(np.log(scale) + 0.9189385332046727 + 0.5)
    return float(np.log(2.0 * scale) + 1.0)


def _validation_nll(family, heteroscedastic, model, x_valid, y_valid):
    outputs, tape = nn.forward(model, x_valid, training=False)
    if heteroscedastic:
        return float(np.mean(dist.nll_from_raw(family, y_valid, tape.raw_outputs)))
    return _homo_valid_nll(family, outputs[:, 0] - y_valid)


def _train_network(config, train_xy, valid_xy, hidden_widths):
    x_train, y_train = train_xy
    x_valid, y_valid = valid_xy
    family, het = config.family, config.heteroscedastic

    links = dist.head_links(family, het)
    model = nn.init_mlp(x_train.shape[1], hidden_widths, nn.HeadSpec(links=links),
                        dropout_rate=config.dropout_rate, seed=config.seed)

    best_nll = _validation_nll(family, het, model, x_valid, y_valid)
    best_model = model.clone()
    history = []
    n = len(y_train)

    for epoch in range(config.epochs):
        lr = effective_lr(config, epoch)
        shuffle_rng = np.random.default_rng([config.seed, epoch, 1])
        dropout_rng = np.random.default_rng([config.seed, epoch, 2])
        order = shuffle_rng.permutation(n)

        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            _, tape = nn.forward(model, xb, training=True, rng=dropout_rng)
            if het:
                nll, grad = dist.nll_grad_from_raw(family, yb, tape.raw_outputs)
                batch_loss = float(nll.mean())
                out_grad = grad / len(idx)
            else:
                batch_loss, out_grad = _homo_loss_grad(family, yb, tape.raw_outputs)
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}; "
                    "consider a lower learning rate")
            grads = nn.backward(tape, out_grad)
            nn.sgd_step(model, grads, lr)
            epoch_loss += batch_loss * len(idx)

        valid_nll = _validation_nll(family, het, model, x_valid, y_valid)
        history.append(EpochStats(epoch=epoch, lr=lr,
                                  train_loss=epoch_loss / n, valid_nll=valid_nll))
        if valid_nll < best_nll:
            best_nll = valid_nll
            best_model = model.clone()

    constant_scale = None
    if not het:
        outputs, _ = nn.forward(best_model, x_valid, training=False)
        constant_scale = fit_constant_scale(family, outputs[:, 0] - y_valid)

    return TrainedModel(kind="mlp", family=family, heteroscedastic=het,
                        net=best_model, constant_scale=constant_scale,
                        history=history, best_valid_nll=best_nll, config=config)


def train_mlp(config, train_xy, valid_xy):
    """Train an MLP head per the config on encoded (X, y_hours) splits."""
    config.validate()
    widths = [config.hidden_width] * config.hidden_layers
    return _train_network(config, train_xy, valid_xy, widths)


def train_linear(train_xy, valid_xy, config=None):
    """Squared-loss linear model via the same SGD machinery (no hidden layers)."""
    if config is None:
        config = TrainConfig(family="gaussian", heteroscedastic=False)
    out = _train_network(config, train_xy, valid_xy, hidden_widths=[])
    out.kind = "linear"
    return out


def linear_coefficients(model, schema):
    """(column name, weight) pairs sorted by decreasing |weight|."""
    if model.kind != "linear":
        raise ConfigError(f"coefficients only apply to linear models, got {model.kind!r}")
    weights = model.net.weights[0][:, 0]
    names = feat.feature_names(schema)
    pairs = list(zip(names, weights.tolist()))
    pairs.sort(key=lambda nw: (-abs(nw[1]), nw[0]))
    return pairs


def grid_search(family, heteroscedastic, train_xy, valid_xy, base_config=None,
                layer_grid=LAYER_GRID, width_grid=WIDTH_GRID):
    """Train every (layers, width) combination; select by validation NLL.

    Homoscedastic selection by validation loss is equivalent: the
    optimal-constant-scale NLL is monotone in the loss. Runs get distinct
    seeds derived from the base seed; results keep config order.
    """
    if base_config is None:
        base_config = TrainConfig(family=family, heteroscedastic=heteroscedastic)
    combos = [(l, w) for l in layer_grid for w in width_grid]
    if not combos:
        raise ConfigError("grid search needs a nonempty grid")
    results = []
    best = None
    for i, (layers, width) in enumerate(combos):
        cfg = replace(base_config, family=family, heteroscedastic=heteroscedastic,
                      hidden_layers=layers, hidden_width=width,
                      seed=base_config.seed + i)
        trained = train_mlp(cfg, train_xy, valid_xy)
        results.append({"hidden_layers": layers, "hidden_width": width,
                        "seed": cfg.seed, "valid_nll": trained.best_valid_nll})
        if best is None or trained.best_valid_nll < best.best_valid_nll:
            best = trained
    return best, results


# ---------------------------------------------------------------------------
# Predictions as (family, params) arrays
# ---------------------------------------------------------------------------

def predict_params(model, x=None, records=None):
    """Per-case predictive-distribution parameters, shape (n, 2).

    MLP/linear models read encoded features `x`; the record-level
    baselines (procedure means, current method) read `records`. Point
    models pair their mean with the fitted constant scale.
    """
    if model.kind == "mlp" and model.heteroscedastic:
        _, tape = nn.forward(model.net, x, training=False)
        return model.family, dist.params_from_raw(model.family, tape.raw_outputs)

    if model.kind in ("mlp", "linear"):
        outputs, _ = nn.forward(model.net, x, training=False)
        mu = outputs[:, 0]
    elif model.kind == "procedure_means":
        mu = predict_procedure_means(model, records)
    elif model.kind == "current":
        mu = np.array([r.scheduled_minutes / 60.0 for r in records])
    else:
        raise ConfigError(f"unknown model kind {model.kind!r}")

    if model.constant_scale is None:
        raise ConfigError(
            f"{model.kind} model has no fitted constant scale; fit one on "
            "validation residuals before requesting distributions")
    params = np.column_stack([mu, np.full_like(mu, model.constant_scale)])
    return model.family, params


def fit_point_model_scale(model, valid_x=None, valid_records=None, valid_y=None):
    """Fit the constant scale of a point model on validation residuals."""
    if model.kind in ("mlp", "linear"):
        outputs, _ = nn.forward(model.net, valid_x, training=False)
        mu = outputs[:, 0]
    elif model.kind == "procedure_means":
        mu = predict_procedure_means(model, valid_records)
    elif model.kind == "current":
        mu = np.array([r.scheduled_minutes / 60.0 for r in valid_records])
    else:
        raise ConfigError(f"unknown model kind {model.kind!r}")
    model.constant_scale = fit_constant_scale(model.family, mu - valid_y)
    return model


# ---------------------------------------------------------------------------
# Bundles: model + schema + split provenance in one JSON document
# ---------------------------------------------------------------------------

def bundle_to_dict(model, schema, split_seed, tool_version):
    doc = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "tool_version": tool_version,
        "kind": model.kind,
        "family": model.family,
        "heteroscedastic": model.heteroscedastic,
        "constant_scale": model.constant_scale,
        "proc_means": model.proc_means,
        "global_mean_hours": model.global_mean_hours,
        "net": nn.model_to_dict(model.net) if model.net is not None else None,
        "train_config": asdict(model.config) if model.config is not None else None,
        "best_valid_nll": None if np.isnan(model.best_valid_nll) else model.best_valid_nll,
        "schema": feat.schema_to_dict(schema),
        "schema_hash": feat.schema_hash(schema),
        "split_seed": split_seed,
    }
    return doc


def bundle_from_dict(doc):
    if doc.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise ConfigError(f"unsupported bundle format_version {doc.get('format_version')!r}")
    model = TrainedModel(
        kind=doc["kind"],
        family=doc["family"],
        heteroscedastic=doc["heteroscedastic"],
        net=nn.model_from_dict(doc["net"]) if doc["net"] is not None else None,
        proc_means=doc["proc_means"],
        global_mean_hours=doc["global_mean_hours"],
        constant_scale=doc["constant_scale"],
        best_valid_nll=float("nan") if doc["best_valid_nll"] is None else doc["best_valid_nll"],
        config=TrainConfig(**doc["train_config"]) if doc["train_config"] else None,
    )
    schema = feat.schema_from_dict(doc["schema"])
    return model, schema, doc["split_seed"]


def save_bundle(path, model, schema, split_seed, tool_version):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle_to_dict(model, schema, split_seed, tool_version),
                  fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_bundle(path):
    with open(path, encoding="utf-8") as fh:
        return bundle_from_dict(json.load(fh))
