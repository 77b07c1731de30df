"""Transfer methods for weekly dropout models and their baselines.

Every trainer receives the target cohort with labels from week k on
withheld (see :meth:`Cohort.hide_labels_from`); only ``no-transfer``
trains on target labels, and it reports on a held-out fifth.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import linalg as sparse_linalg

from . import nn
from .data import Cohort, slice_for_week
from .errors import ShapeError, TrainingDivergedError
from .representation import (AutoencoderConfig, AutoencoderModel, EmbeddingSet, PcaModel,
                             build_linear_autoencoder, build_lstm_autoencoder, encode,
                             init_decoder_bias,
                             fit_tpca_and_align, pca_transform, train_autoencoder)

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1


@dataclass
class MethodConfig:
    epochs: int = 100
    ae_epochs: int | None = None
    batch_size: int = 128
    learning_rate: float = 1e-3
    predictor_learning_rate: float | None = None
    bottleneck: int = 8
    tpca_out: int = 6
    loss_weights: tuple = (0.008, 1.0, 1000.0)
    split: float = 0.8
    kmm_bound: float = 10.0
    kmm_eps: float = 0.05
    kmm_sigma: float | None = None
    kmm_max_iter: int = 2000
    in_situ_window: int | None = None
    at_risk_only: bool = True
    active_autoencoder: str = "lstm"
    seed: int = 0

    def training(self, seed_offset: int = 0, predictor: bool = False) -> nn.TrainingConfig:
        lr = self.predictor_learning_rate if predictor and self.predictor_learning_rate is not None else self.learning_rate
        return nn.TrainingConfig(self.epochs, self.batch_size, lr, self.seed + seed_offset)

    def autoencoder(self) -> AutoencoderConfig:
        return AutoencoderConfig(self.ae_epochs or self.epochs, self.batch_size, self.learning_rate,
                                 self.bottleneck, True, self.seed)


@dataclass
class TransferTask:
    source: Cohort
    target: Cohort
    week: int
    config: MethodConfig = field(default_factory=MethodConfig)

    def __post_init__(self):
        if self.source.vocabulary.names != self.target.vocabulary.names:
            raise ValueError("source and target must share the event vocabulary")
        if not 2 <= self.week <= min(self.source.n_weeks, self.target.n_weeks):
            raise ValueError(f"week {self.week} out of range")
        if self.target.label_horizon >= self.week:
            # target labels for the predicted week must never reach a trainer
            self.target = self.target.hide_labels_from(self.week)

    def source_slice(self):
        X, y, _ = slice_for_week(self.source, self.week, self.config.at_risk_only)
        return X, y

    def target_features(self):
        X, _, _ = slice_for_week(self.target, self.week, self.config.at_risk_only)
        return X


# --------------------------------------------------------------------------
# CORAL

def covariance(X) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / (X.shape[0] - 1)


def coral_loss(ES, ET):
    """``||C_S - C_T||_F^2 / (4 d^2)`` and its gradients w.r.t. both embedding sets."""
    ES = np.asarray(ES.flat if isinstance(ES, EmbeddingSet) else ES, dtype=float)
    ET = np.asarray(ET.flat if isinstance(ET, EmbeddingSet) else ET, dtype=float)
    if ES.ndim != 2 or ET.ndim != 2 or ES.shape[1] != ET.shape[1]:
        raise ShapeError(f"embedding shapes {ES.shape} and {ET.shape} are incompatible")
    nS, nT = len(ES), len(ET)
    if nS < 2 or nT < 2:
        raise ValueError("CORAL needs at least two rows on each side")
    d = ES.shape[1]
    diff = covariance(ES) - covariance(ET)
    loss = float(np.sum(diff * diff) / (4.0 * d * d))
    gS = (ES - ES.mean(axis=0)) @ diff / (d * d * (nS - 1))
    gT = -(ET - ET.mean(axis=0)) @ diff / (d * d * (nT - 1))
    return loss, gS, gT


# --------------------------------------------------------------------------
# kernel mean matching

@dataclass
class InstanceWeights:
    weights: np.ndarray
    bound: float
    sigma: float
    eps: float
    objective: float
    converged: bool


def median_distance(X, max_points: int = 1000, seed: int = 0) -> float:
    X = np.asarray(X, float)
    if len(X) > max_points:
        X = X[np.random.default_rng(seed).choice(len(X), max_points, replace=False)]
    sq = np.sum(X * X, axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    iu = np.triu_indices(len(X), 1)
    med = float(np.median(np.sqrt(D2[iu]))) if iu[0].size else 0.0
    return med if med > 0 else 1.0


def gaussian_kernel(A, B, sigma: float) -> np.ndarray:
    sa, sb = np.sum(A * A, axis=1), np.sum(B * B, axis=1)
    D2 = np.maximum(sa[:, None] + sb[None, :] - 2 * A @ B.T, 0.0)
    return np.exp(-D2 / (2.0 * sigma * sigma))


def kmm_objective(w, K, kappa, const, nS) -> float:
    """||(1/nS) sum w_i phi(x_i) - (1/nT) sum phi(t_j)||^2 from kernel blocks."""
    return float(w @ K @ w / nS**2 - 2.0 * w @ kappa / nS + const)


def project_box_sum(v, B: float, lo: float, hi: float) -> np.ndarray:
    """Euclidean projection onto {0 <= w <= B, lo <= sum(w) <= hi}."""
    w = np.clip(v, 0.0, B)
    s = w.sum()
    if lo <= s <= hi:
        return w
    target = lo if s < lo else hi
    # sum(clip(v - tau)) is monotone decreasing in tau; bisect for the boundary
    a, b = np.min(v) - B, np.max(v)
    for _ in range(200):
        tau = 0.5 * (a + b)
        if np.clip(v - tau, 0.0, B).sum() > target:
            a = tau
        else:
            b = tau
    return np.clip(v - 0.5 * (a + b), 0.0, B)


def kmm_weights(XS, XT, sigma: float | None = None, B: float = 10.0, eps: float = 0.05,
                max_iter: int = 2000, tol: float = 1e-9, seed: int = 0) -> InstanceWeights:
    """Kernel mean matching by accelerated projected gradient descent."""
    XS = np.asarray(XS, float).reshape(len(XS), -1)
    XT = np.asarray(XT, float).reshape(len(XT), -1)
    if len(XS) == 0 or len(XT) == 0:
        raise ValueError("KMM needs nonempty source and target samples")
    nS, nT = len(XS), len(XT)
    if sigma is None:
        sigma = median_distance(np.concatenate([XS, XT]), seed=seed)
    K = gaussian_kernel(XS, XS, sigma)
    kappa = gaussian_kernel(XS, XT, sigma).mean(axis=1)
    if nT <= 3000:
        const = float(gaussian_kernel(XT, XT, sigma).mean())
    else:
        sub = XT[np.random.default_rng(seed).choice(nT, 3000, replace=False)]
        const = float(gaussian_kernel(sub, sub, sigma).mean())
    lo, hi = nS * (1.0 - eps), nS * (1.0 + eps)
    if nS > 200:
        # Lanczos estimate, padded so the step never exceeds 1/L
        top = sparse_linalg.eigsh(K, k=1, which="LA", tol=1e-8, v0=np.ones(nS),
                                  return_eigenvectors=False)[0] * 1.001
    else:
        top = np.linalg.eigvalsh(K)[-1]
    L = 2.0 * top / nS**2
    step = 1.0 / L
    w = np.ones(nS)
    y, t = w.copy(), 1.0
    converged = False
    for it in range(max_iter):
        grad = 2.0 * (K @ y) / nS**2 - 2.0 * kappa / nS
        w_new = project_box_sum(y - step * grad, B, lo, hi)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        delta = np.linalg.norm(w_new - w)
        w, t = w_new, t_new
        if delta <= tol * max(1.0, np.linalg.norm(w)):
            converged = True
            break
    obj = kmm_objective(w, K, kappa, const, nS)
    if not converged:
        log.info("KMM did not converge in %d iterations (last step norm %.3g)", max_iter, delta)
    return InstanceWeights(w, B, float(sigma), eps, obj, converged)


# --------------------------------------------------------------------------
# predictors

@dataclass
class WeeklyPredictor:
    """Trained f_k: optional AE (+ T-PCA) representation followed by a predictor network."""
    method: str
    week: int
    predictor: nn.Network | None = None
    autoencoder: AutoencoderModel | None = None
    tpca: PcaModel | None = None
    window: int | None = None
    constant: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def representation(self) -> str:
        if self.autoencoder is None:
            return "none"
        return "AE+T-PCA" if self.tpca is not None else "AE"

    def features(self, X) -> np.ndarray:
        """Input of the predictor network for raw week-(k-1) features ``X``."""
        if self.window is not None:
            X = X[:, X.shape[1] - self.window:]
        if self.autoencoder is None:
            return X
        emb = encode(self.autoencoder, X).values
        if self.tpca is None:
            return emb
        n, units, b = emb.shape
        return pca_transform(self.tpca, emb.reshape(-1, b)).reshape(n, units, -1)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[1] != self.week - 1:
            raise ShapeError(f"week-{self.week} predictor needs {self.week - 1} weeks of features, "
                             f"got shape {X.shape}")
        if self.constant is not None:
            return np.full(len(X), self.constant)
        if len(X) == 0:
            return np.zeros(0)
        return self.predictor.forward(self.features(X)).reshape(-1)

    def to_dict(self) -> dict:
        return {
            "version": BUNDLE_VERSION, "method": self.method, "week": self.week,
            "predictor": None if self.predictor is None else self.predictor.to_dict(),
            "autoencoder": None if self.autoencoder is None else self.autoencoder.to_dict(),
            "tpca": None if self.tpca is None else json.loads(self.tpca.to_json()),
            "window": self.window, "constant": self.constant, "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d) -> "WeeklyPredictor":
        if d.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported predictor bundle version {d.get('version')}")
        return cls(d["method"], d["week"],
                   None if d["predictor"] is None else nn.Network.from_dict(d["predictor"]),
                   None if d["autoencoder"] is None else AutoencoderModel.from_dict(d["autoencoder"]),
                   None if d["tpca"] is None else PcaModel.from_json(json.dumps(d["tpca"])),
                   d["window"], d["constant"], d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "WeeklyPredictor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def predict(predictor: WeeklyPredictor, features) -> np.ndarray:
    return predictor.predict(features)


def _train_lstm(X, y, config: MethodConfig, weights=None) -> nn.Network:
    net = nn.build_network(nn.lstm_predictor_specs(), X.shape[1:], config.seed)
    nn.init_output_bias(net, np.average(y, weights=weights))
    nn.fit(net, X, y.astype(float), "bce", config.training(predictor=True), sample_weights=weights)
    return net


def _train_cnn(Z, y, config: MethodConfig) -> nn.Network:
    net = nn.build_network(nn.cnn_predictor_specs(), Z.shape[1:], config.seed)
    nn.init_output_bias(net, np.mean(y))
    nn.fit(net, Z, y.astype(float), "bce", config.training(predictor=True))
    return net


# --------------------------------------------------------------------------
# methods

def train_naive(task: TransferTask) -> WeeklyPredictor:
    XS, yS = task.source_slice()
    return WeeklyPredictor("naive", task.week, _train_lstm(XS, yS, task.config))


def train_instance(task: TransferTask) -> WeeklyPredictor:
    XS, yS = task.source_slice()
    XT = task.target_features()
    c = task.config
    iw = kmm_weights(XS, XT, c.kmm_sigma, c.kmm_bound, c.kmm_eps, c.kmm_max_iter, seed=c.seed)
    net = _train_lstm(XS, yS, c, weights=iw.weights)
    return WeeklyPredictor("instance", task.week, net,
                           meta={"kmm_sigma": iw.sigma, "kmm_objective": iw.objective,
                                 "kmm_converged": iw.converged})


def train_in_situ(task: TransferTask) -> WeeklyPredictor:
    """Sliding-window model on the target course with last week's dropout as proxy label.

    Trains on weeks [k-1-w, k-2] against y_{k-1} and predicts week k from
    weeks [k-w, k-1].  Week 2 has no usable window and falls back to a
    constant predictor.
    """
    k, c, target = task.week, task.config, task.target
    if k == 2:
        return WeeklyPredictor("in-situ", k, constant=0.0, meta={"fallback": "constant"})
    w = k - 2 if c.in_situ_window is None else c.in_situ_window
    if not 1 <= w <= k - 2:
        raise ValueError(f"in-situ window {w} does not fit inside weeks [1, {k - 2}]")
    # population at risk of dropping out in week k-1, labels y_{k-1} are observed history
    X, y, _ = slice_for_week(target, k - 1, c.at_risk_only)
    if y is None or len(np.unique(y)) < 2:
        rate = 0.0 if y is None or len(y) == 0 else float(np.mean(y))
        return WeeklyPredictor("in-situ", k, constant=rate, meta={"fallback": "single-class"})
    Xw = X[:, X.shape[1] - w:]
    net = _train_lstm(Xw, y, c)
    return WeeklyPredictor("in-situ", k, net, window=w)


def no_transfer_split(n: int, config: MethodConfig, fold: int = 0, n_folds: int = 1):
    """Train/test indices.  One fold: the ``split`` ratio (4:1).  Several:
    ``fold`` of ``n_folds`` equal parts of one seeded permutation is held out."""
    order = np.random.default_rng(config.seed).permutation(n)
    if n_folds == 1:
        n_train = int(round(config.split * n))
        return np.sort(order[:n_train]), np.sort(order[n_train:])
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold {fold} outside 0..{n_folds - 1}")
    parts = np.array_split(order, n_folds)
    test = np.sort(parts[fold])
    return np.sort(np.concatenate([p for i, p in enumerate(parts) if i != fold])), test


def train_no_transfer(target: Cohort, week: int, config: MethodConfig = MethodConfig(),
                      use_ae: bool = False, fold: int = 0, n_folds: int = 1):
    """Train on the labeled target minus a held-out part; returns ``(predictor, test_index)``.

    ``test_index`` indexes rows of ``slice_for_week(target, week)``.
    """
    X, y, _ = slice_for_week(target, week, config.at_risk_only)
    if y is None:
        raise ValueError("no-transfer needs target labels for the predicted week")
    train, test = no_transfer_split(len(X), config, fold, n_folds)
    name = "no-transfer-AE" if use_ae else "no-transfer"
    if not use_ae:
        pred = WeeklyPredictor(name, week, _train_lstm(X[train], y[train], config))
    else:
        ae = train_autoencoder(X[train], None, config.autoencoder())
        Z = encode(ae, X[train]).values
        pred = WeeklyPredictor(name, week, _train_cnn(Z, y[train], config), autoencoder=ae)
    pred.meta.update({"fold": fold, "n_folds": n_folds, "test_index": test.tolist()})
    return pred, test


def train_passive(task: TransferTask) -> WeeklyPredictor:
    """AE on source+target, PCA fit on the target embedding, CNN on the projected source."""
    XS, yS = task.source_slice()
    XT = task.target_features()
    c = task.config
    ae = train_autoencoder(XS, XT, c.autoencoder())
    aligned = fit_tpca_and_align(encode(ae, XT), encode(ae, XS), c.tpca_out)
    net = _train_cnn(aligned.source.values, yS, c)
    return WeeklyPredictor("passive", task.week, net, autoencoder=ae, tpca=aligned.pca,
                           meta={"ae_final_loss": ae.loss_trace[-1] if ae.loss_trace else None})


@dataclass
class ActiveTrace:
    total: list = field(default_factory=list)
    prediction: list = field(default_factory=list)
    reconstruction: list = field(default_factory=list)
    coral: list = field(default_factory=list)


def train_active(task: TransferTask, return_trace: bool = False):
    """Joint training of encoder, decoder and CNN head on
    ``w_pred * BCE(source) + w_recon * MSE(target) + w_coral * CORAL(E_S, E_T)``
    with equal source and target half-batches.
    """
    XS, yS = task.source_slice()
    XT = task.target_features()
    c = task.config
    lam_p, lam_r, lam_c = c.loss_weights
    n_steps, E = XS.shape[1], XS.shape[2]
    if c.active_autoencoder == "lstm":
        ae = build_lstm_autoencoder(n_steps, E, c.bottleneck, c.seed)
    elif c.active_autoencoder == "linear":
        ae = build_linear_autoencoder(n_steps, E, c.bottleneck, c.seed)
    else:
        raise ValueError(f"unknown autoencoder kind {c.active_autoencoder!r}")
    if c.active_autoencoder == "lstm":
        init_decoder_bias(ae, XT)
    enc, dec = ae.encoder, ae.decoder
    b = ae.bottleneck_per_unit
    head = nn.build_network(nn.cnn_predictor_specs(), (n_steps, b), c.seed + 2)
    nn.init_output_bias(head, np.mean(yS))
    opts = [nn.AdamState.zeros(net.n_params, c.learning_rate) for net in (enc, dec, head)]
    rng = np.random.default_rng(c.seed)
    half = max(c.batch_size // 2, 2)
    nS, nT = len(XS), len(XT)
    if nS < 2 or nT < 2:
        raise ValueError("active transfer needs at least two source and two target students")
    steps_per_epoch = int(np.ceil(max(nS, nT) / half))
    trace = ActiveTrace()
    yS = yS.astype(float)
    for epoch in range(c.ae_epochs or c.epochs):
        s_order = np.concatenate([rng.permutation(nS) for _ in range(int(np.ceil(steps_per_epoch * half / nS)))])
        t_order = np.concatenate([rng.permutation(nT) for _ in range(int(np.ceil(steps_per_epoch * half / nT)))])
        sums = np.zeros(4)
        for step in range(steps_per_epoch):
            si = s_order[step * half:(step + 1) * half]
            ti = t_order[step * half:(step + 1) * half]
            xs, xt = XS[si], XT[ti]
            m = len(si)
            Z = enc.forward(np.concatenate([xs, xt]))
            zs, zt = Z[:m], Z[m:]
            p = head.forward(zs.reshape(m, n_steps, b))
            l_pred, g_pred = nn.bce_loss(p, yS[si])
            recon = dec.forward(zt)
            l_rec, g_rec = nn.mse_loss(recon, xt)
            l_cor, g_cs, g_ct = coral_loss(zs, zt)
            total = lam_p * l_pred + lam_r * l_rec + lam_c * l_cor
            if not np.isfinite(total):
                comps = {"prediction": l_pred, "reconstruction": l_rec, "coral": l_cor}
                raise TrainingDivergedError(f"active loss became {total} in epoch {epoch}: {comps}",
                                            epoch=epoch, components=comps)
            g_head = head.backward(lam_p * g_pred)
            g_dec = dec.backward(lam_r * g_rec)
            gz = np.concatenate([head.input_gradient.reshape(m, -1) + lam_c * g_cs,
                                 dec.input_gradient + lam_c * g_ct])
            g_enc = enc.backward(gz)
            for net, opt, g in zip((enc, dec, head), opts, (g_enc, g_dec, g_head)):
                nn.adam_step(opt, net.theta, g)
            sums += (total, l_pred, l_rec, l_cor)
        sums /= steps_per_epoch
        trace.total.append(sums[0])
        trace.prediction.append(sums[1])
        trace.reconstruction.append(sums[2])
        trace.coral.append(sums[3])
    pred = WeeklyPredictor("active", task.week, head, autoencoder=ae,
                           meta={"final_losses": {"total": trace.total[-1], "prediction": trace.prediction[-1],
                                                  "reconstruction": trace.reconstruction[-1],
                                                  "coral": trace.coral[-1]}})
    return (pred, trace) if return_trace else pred


METHODS = {
    "naive": train_naive,
    "instance": train_instance,
    "in-situ": train_in_situ,
    "passive": train_passive,
    "active": train_active,
}
ALL_METHODS = ("passive", "active", "naive", "in-situ", "instance", "no-transfer", "no-transfer-AE")
