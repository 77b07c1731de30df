"""PCA, linear and LSTM autoencoders, and transductive PCA alignment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import RankDeficiencyError, ShapeError, TrainingDivergedError


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by descending eigenvalue;
    eigenvectors are the columns.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ShapeError("jacobi_eigh needs a square matrix")
    V = np.eye(n)
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude coordinate is positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "components": self.components.tolist(),
                           "explained_variance": self.explained_variance.tolist(),
                           "total_variance": self.total_variance})

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        d = json.loads(text)
        return cls(np.array(d["mean"]), np.array(d["components"]),
                   np.array(d["explained_variance"]), float(d["total_variance"]))


def fit_pca(data, n_components: int) -> PcaModel:
    X = np.asarray(data, dtype=float)
    n, m = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two rows")
    if not 1 <= n_components <= min(n, m):
        raise ValueError(f"n_components={n_components} must lie in [1, {min(n, m)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    w, V = jacobi_eigh(cov)
    w = np.clip(w, 0.0, None)
    comps = fix_signs(V[:, :n_components].T)
    return PcaModel(mean, comps, w[:n_components], float(w.sum()))


def pca_transform(model: PcaModel, data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.shape[-1] != model.mean.size:
        raise ShapeError(f"data has {X.shape[-1]} columns, model expects {model.mean.size}")
    return (X - model.mean) @ model.components.T


def pca_reconstruction_error(model: PcaModel, data) -> float:
    X = np.asarray(data, dtype=float)
    Z = pca_transform(model, X)
    R = Z @ model.components + model.mean
    return float(np.mean((X - R) ** 2))


def numerical_rank(X, rtol: float = 1e-9) -> int:
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        return 0
    Xc = X - X.mean(axis=0)
    w = np.linalg.eigvalsh(Xc.T @ Xc / (X.shape[0] - 1))
    return int(np.sum(w > rtol * max(w.max(), np.finfo(float).tiny)))


# --------------------------------------------------------------------------
# autoencoders

@dataclass
class AutoencoderConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    bottleneck: int = 8
    balance: bool = True
    seed: int = 0


@dataclass
class EmbeddingSet:
    """Per-time-unit embeddings, shape (n, units, dims)."""
    values: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(self.values.shape[0], -1)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1] * self.values.shape[2]

    def to_csv(self, path, student_ids=None):
        import csv
        ids = range(self.n) if student_ids is None else student_ids
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["student_id", "unit", "dim", "value"])
            for sid, row in zip(ids, self.values):
                for u in range(row.shape[0]):
                    for j in range(row.shape[1]):
                        w.writerow([sid, u + 1, j + 1, repr(float(row[u, j]))])


@dataclass
class AutoencoderModel:
    encoder: nn.Network
    decoder: nn.Network
    bottleneck_per_unit: int = 8
    loss_trace: list = field(default_factory=list)

    @property
    def input_shape(self):
        return self.encoder.input_shape

    def reconstruct(self, X) -> np.ndarray:
        return self.decoder.forward(self.encoder.forward(X))

    def to_dict(self):
        return {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict(),
                "bottleneck_per_unit": self.bottleneck_per_unit}

    @classmethod
    def from_dict(cls, d):
        return cls(nn.Network.from_dict(d["encoder"]), nn.Network.from_dict(d["decoder"]),
                   d["bottleneck_per_unit"])


def build_lstm_autoencoder(n_steps: int, n_channels: int, bottleneck: int = 8, seed: int = 0):
    enc = nn.build_network(nn.lstm_ae_encoder_specs(bottleneck), (n_steps, n_channels), seed)
    dec = nn.build_network(nn.lstm_ae_decoder_specs(n_steps, n_channels, bottleneck),
                           enc.output_shape, seed + 1)
    return AutoencoderModel(enc, dec, bottleneck)


def build_linear_autoencoder(n_steps: int, n_channels: int, n_components: int, seed: int = 0):
    """Per-time-unit linear encoder/decoder (the neural-network PCA)."""
    enc = nn.build_network([nn.Conv1D(n_components, 1), nn.Flatten()], (n_steps, n_channels), seed)
    dec = nn.build_network([nn.Reshape((n_steps, n_components)), nn.Conv1D(n_channels, 1)],
                           enc.output_shape, seed + 1)
    return AutoencoderModel(enc, dec, n_components)


def init_decoder_bias(model: AutoencoderModel, X):
    """Start the decoder's sigmoid output at each channel's mean of ``X``.

    Without it the LSTM autoencoder spends its early epochs on a plateau
    where it reproduces only the per-type means.
    """
    conv = [layer for layer in model.decoder.layers if isinstance(layer, nn._Conv1D)]
    if not conv or len(X) == 0:
        return
    m = np.clip(np.asarray(X, float).reshape(-1, X.shape[-1]).mean(axis=0), 1e-3, 1 - 1e-3)
    conv[-1].b[...] = np.log(m / (1.0 - m))


def balanced_union(XS, XT, rng) -> np.ndarray:
    """Stack both cohorts, oversampling the smaller one to a 1:1 ratio."""
    nS, nT = len(XS), len(XT)
    if nS == 0 or nT == 0:
        return np.concatenate([XS, XT])
    if nS < nT:
        XS = XS[np.concatenate([np.arange(nS), rng.choice(nS, nT - nS)])]
    elif nT < nS:
        XT = XT[np.concatenate([np.arange(nT), rng.choice(nT, nS - nT)])]
    return np.concatenate([XS, XT])


def train_autoencoder(XS, XT=None, config: AutoencoderConfig = AutoencoderConfig(),
                      model: AutoencoderModel | None = None) -> AutoencoderModel:
    """Train the LSTM autoencoder on the union of source and target features."""
    XS = np.asarray(XS, dtype=float)
    XT = np.zeros((0,) + XS.shape[1:]) if XT is None else np.asarray(XT, dtype=float)
    if XS.shape[1:] != XT.shape[1:]:
        raise ShapeError(f"source {XS.shape[1:]} and target {XT.shape[1:]} sequences differ")
    rng = np.random.default_rng(config.seed)
    X = balanced_union(XS, XT, rng) if config.balance else np.concatenate([XS, XT])
    if model is None:
        model = build_lstm_autoencoder(X.shape[1], X.shape[2], config.bottleneck, config.seed)
        init_decoder_bias(model, X)
    enc, dec = model.encoder, model.decoder
    opt_e = nn.AdamState.zeros(enc.n_params, config.learning_rate)
    opt_d = nn.AdamState.zeros(dec.n_params, config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        total = 0.0
        for idx in nn.iterate_minibatches(len(X), config.batch_size, rng):
            xb = X[idx]
            out = dec.forward(enc.forward(xb))
            loss, g = nn.mse_loss(out, xb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"autoencoder loss became {loss} in epoch {epoch}", epoch=epoch)
            gd = dec.backward(g)
            ge = enc.backward(dec.input_gradient)
            nn.adam_step(opt_d, dec.theta, gd)
            nn.adam_step(opt_e, enc.theta, ge)
            total += loss * len(idx)
        trace.append(total / len(X))
    model.loss_trace = trace
    return model


def encode(model: AutoencoderModel, features) -> EmbeddingSet:
    X = np.asarray(features, dtype=float)
    if X.shape[1:] != model.input_shape:
        raise ShapeError(f"features {X.shape[1:]} do not match autoencoder input {model.input_shape}")
    b = model.bottleneck_per_unit
    if X.shape[0] == 0:
        return EmbeddingSet(np.zeros((0, X.shape[1], b)))
    flat = model.encoder.forward(X)
    return EmbeddingSet(flat.reshape(X.shape[0], -1, b))


@dataclass
class TpcaResult:
    source: EmbeddingSet
    target: EmbeddingSet
    pca: PcaModel


def fit_tpca_and_align(target: EmbeddingSet, source: EmbeddingSet, n_out_per_unit: int = 6,
                       n_labels: int = 1) -> TpcaResult:
    """Fit PCA on target per-unit embedding vectors and apply it to both sets.

    Per-unit vectors are pooled across time units for the fit; the transform
    is applied unit-wise so the temporal axis is preserved.
    """
    tv, sv = target.values, source.values
    if tv.shape[1:] != sv.shape[1:]:
        raise ShapeError(f"target {tv.shape[1:]} and source {sv.shape[1:]} embeddings differ")
    units, b = tv.shape[1], tv.shape[2]
    if not 1 <= n_out_per_unit < b:
        raise ValueError(f"n_out_per_unit must lie in [1, {b - 1}]")
    if n_out_per_unit * units <= n_labels:
        raise ValueError("T-PCA output must exceed the number of predicted labels")
    pooled = tv.reshape(-1, b)
    rank = numerical_rank(pooled)
    if rank < n_out_per_unit:
        raise RankDeficiencyError(f"target embedding has rank {rank} < {n_out_per_unit}", rank=rank)
    pca = fit_pca(pooled, n_out_per_unit)
    out_t = pca_transform(pca, tv.reshape(-1, b)).reshape(tv.shape[0], units, n_out_per_unit)
    out_s = pca_transform(pca, sv.reshape(-1, b)).reshape(sv.shape[0], units, n_out_per_unit)
    return TpcaResult(EmbeddingSet(out_s), EmbeddingSet(out_t), pca)


# --------------------------------------------------------------------------
# neural-network PCA

@dataclass
class NnPcaModel:
    encoder: nn.Network
    decoder: nn.Network
    mean: np.ndarray
    loss_trace: list

    @property
    def projection(self) -> np.ndarray:
        """Encoder matrix, shape (n_components, n_features)."""
        return self.encoder.layers[0].W.T.copy()

    def transform(self, X) -> np.ndarray:
        return self.encoder.forward(np.asarray(X, float) - self.mean)

    def reconstruct(self, X) -> np.ndarray:
        return self.decoder.forward(self.transform(X)) + self.mean

    def reconstruction_error(self, X) -> float:
        X = np.asarray(X, float)
        return float(np.mean((self.reconstruct(X) - X) ** 2))


def fit_nn_pca(features, n_components: int, epochs: int = 300, batch_size: int = 128,
               learning_rate: float = 1e-2, seed: int = 0, polish: bool = True) -> NnPcaModel:
    """Linear autoencoder trained with MSE; its encoder spans the top principal subspace.

    With ``polish`` the encoder is finally set to the pseudo-inverse of the
    learned decoder and the decoder to the least-squares solution for the
    resulting codes: one alternating least-squares sweep.
    """
    X = np.asarray(features, dtype=float)
    n, m = X.shape
    if n < 2:
        raise ValueError("NN-PCA needs at least two rows")
    if not 1 <= n_components <= min(n, m):
        raise ValueError(f"n_components={n_components} must lie in [1, {min(n, m)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    enc = nn.build_network([nn.Dense(n_components)], (m,), seed)
    dec = nn.build_network([nn.Dense(m)], (n_components,), seed + 1)
    opt_e = nn.AdamState.zeros(enc.n_params, learning_rate)
    opt_d = nn.AdamState.zeros(dec.n_params, learning_rate)
    rng = np.random.default_rng(seed)
    trace = []
    for epoch in range(epochs):
        total = 0.0
        for idx in nn.iterate_minibatches(n, batch_size, rng):
            xb = Xc[idx]
            out = dec.forward(enc.forward(xb))
            loss, g = nn.mse_loss(out, xb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"NN-PCA loss became {loss} in epoch {epoch}", epoch=epoch)
            gd = dec.backward(g)
            ge = enc.backward(dec.input_gradient)
            nn.adam_step(opt_d, dec.theta, gd)
            nn.adam_step(opt_e, enc.theta, ge)
            total += loss * len(idx)
        trace.append(total / n)
    if polish:
        # encoder <- pinv(decoder), the MSE-optimal encoder for a fixed decoder;
        # low-variance directions otherwise decay slowly under gradient descent
        Wd, bd = dec.layers[0].W, dec.layers[0].b
        We = np.linalg.pinv(Wd)
        enc.layers[0].W[...] = We
        enc.layers[0].b[...] = -bd @ We
        Z = enc.forward(Xc)
        Z1 = np.hstack([Z, np.ones((n, 1))])
        sol, *_ = np.linalg.lstsq(Z1, Xc, rcond=None)
        dec.layers[0].W[...] = sol[:-1]
        dec.layers[0].b[...] = sol[-1]
    return NnPcaModel(enc, dec, mean, trace)


def principal_angles(A, B) -> np.ndarray:
    """Principal angles (degrees) between the row spaces of A and B."""
    qa, _ = np.linalg.qr(np.asarray(A, float).T)
    qb, _ = np.linalg.qr(np.asarray(B, float).T)
    s = np.clip(np.linalg.svd(qa.T @ qb, compute_uv=False), -1.0, 1.0)
    return np.degrees(np.arccos(s))
