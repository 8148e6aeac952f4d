"""Encoder/decoder pairs producing the latent representation of a subject.

Two variants share one parameter-dict layout:

* ``"lstm"``: single-layer LSTM encoder whose final hidden state is the
  representation; the decoder starts from that state, is fed zero inputs and
  emits one feature vector per step through a linear head.
* ``"mlp"``: two dense layers with a ReLU in between (F -> 2d -> d and back),
  for one-time features.

Batches are right-padded; masks freeze the encoder state past each
subject's last event and drop padded steps from the loss, so a padded batch
computes exactly what per-subject evaluation would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

ENCODER_PREFIX = "enc_"
DECODER_PREFIX = "dec_"


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_autoencoder_params(kind: str, n_features: int, latent_dim: int, rng) -> dict:
    F, d = n_features, latent_dim
    if kind == "lstm":
        return {
            "enc_Wx": _uniform(rng, (F, 4 * d), F),
            "enc_Wh": _uniform(rng, (d, 4 * d), d),
            "enc_b": _uniform(rng, (4 * d,), d),
            "dec_Wh": _uniform(rng, (d, 4 * d), d),
            "dec_b": _uniform(rng, (4 * d,), d),
            "dec_Wo": _uniform(rng, (d, F), d),
            "dec_bo": _uniform(rng, (F,), d),
        }
    if kind == "mlp":
        h = 2 * d
        return {
            "enc_W1": _uniform(rng, (F, h), F),
            "enc_b1": _uniform(rng, (h,), F),
            "enc_W2": _uniform(rng, (h, d), h),
            "enc_b2": _uniform(rng, (d,), h),
            "dec_W1": _uniform(rng, (d, h), d),
            "dec_b1": _uniform(rng, (h,), d),
            "dec_W2": _uniform(rng, (h, F), h),
            "dec_b2": _uniform(rng, (F,), h),
        }
    raise ValueError(f"unknown autoencoder kind {kind!r}")


def _lstm_cell(gates, c, d):
    i = ad.sigmoid(ad.columns(gates, 0, d))
    f = ad.sigmoid(ad.columns(gates, d, 2 * d))
    g = ad.tanh(ad.columns(gates, 2 * d, 3 * d))
    o = ad.sigmoid(ad.columns(gates, 3 * d, 4 * d))
    c = f * c + i * g
    return o * ad.tanh(c), c


def encode_batch(kind: str, p: dict, X: np.ndarray, lengths: np.ndarray) -> ad.Var:
    """Representations (B, d) for a padded batch X of shape (B, L, F)."""
    if X.shape[2] != p["enc_Wx" if kind == "lstm" else "enc_W1"].shape[0]:
        raise ValueError(
            f"feature dimension mismatch: data has {X.shape[2]}, "
            f"encoder expects {p['enc_Wx' if kind == 'lstm' else 'enc_W1'].shape[0]}"
        )
    if kind == "mlp":
        if X.shape[1] != 1:
            raise ValueError("the feedforward encoder takes one event per subject")
        hidden = ad.relu(ad.add(ad.matmul(X[:, 0, :], p["enc_W1"]), p["enc_b1"]))
        return ad.add(ad.matmul(hidden, p["enc_W2"]), p["enc_b2"])

    B, L, _ = X.shape
    d = p["enc_Wh"].shape[0]
    h = ad.Var(np.zeros((B, d)))
    c = ad.Var(np.zeros((B, d)))
    for t in range(L):
        gates = ad.add(ad.add(ad.matmul(X[:, t, :], p["enc_Wx"]), ad.matmul(h, p["enc_Wh"])), p["enc_b"])
        h_new, c_new = _lstm_cell(gates, c, d)
        alive = (t < lengths)[:, None]
        if alive.all():
            h, c = h_new, c_new
        else:
            h = ad.where(alive, h_new, h)
            c = ad.where(alive, c_new, c)
    return h


def decode_batch(kind: str, p: dict, z, n_steps: int) -> list:
    """Reconstructed events: a list of ``n_steps`` arrays of shape (B, F)."""
    if n_steps < 1:
        raise ValueError("decode needs at least one step")
    if kind == "mlp":
        hidden = ad.relu(ad.add(ad.matmul(z, p["dec_W1"]), p["dec_b1"]))
        return [ad.add(ad.matmul(hidden, p["dec_W2"]), p["dec_b2"])]
    z = ad.as_var(z)
    d = p["dec_Wh"].shape[0]
    h, c = z, ad.Var(np.zeros(z.shape))
    out = []
    for _ in range(n_steps):
        gates = ad.add(ad.matmul(h, p["dec_Wh"]), p["dec_b"])
        h, c = _lstm_cell(gates, c, d)
        out.append(ad.add(ad.matmul(h, p["dec_Wo"]), p["dec_bo"]))
    return out


def reconstruction_loss_batch(kind: str, p: dict, X: np.ndarray, lengths: np.ndarray, z=None):
    """Mean over subjects of the summed squared reconstruction error.

    Returns (loss, z) so callers can reuse the representation.
    """
    if z is None:
        z = encode_batch(kind, p, X, lengths)
    steps = decode_batch(kind, p, z, X.shape[1])
    total = None
    for t, xt in enumerate(steps):
        diff = ad.sub(xt, X[:, t, :])
        alive = (t < lengths).astype(np.float64)[:, None]
        if not alive.all():
            diff = diff * alive
        term = ad.sum(ad.square(diff))
        total = term if total is None else total + term
    return total * (1.0 / X.shape[0]), z


def pad(events_list) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([e.shape[0] for e in events_list], dtype=int)
    F = events_list[0].shape[1]
    X = np.zeros((len(events_list), int(lengths.max()), F))
    for i, e in enumerate(events_list):
        if e.shape[1] != F:
            raise ValueError("all subjects must share one feature dimension")
        X[i, : e.shape[0]] = e
    return X, lengths


@dataclass
class Autoencoder:
    kind: str
    n_features: int
    latent_dim: int
    params: dict

    @classmethod
    def init(cls, kind: str, n_features: int, latent_dim: int, rng) -> "Autoencoder":
        return cls(kind, n_features, latent_dim, init_autoencoder_params(kind, n_features, latent_dim, rng))

    def encode_padded(self, X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        return encode_batch(self.kind, self.params, X, lengths).value


def encode(events: np.ndarray, ae: Autoencoder) -> np.ndarray:
    """Representation of one subject's (n_p, F) event matrix."""
    events = np.atleast_2d(np.asarray(events, dtype=np.float64))
    return encode_batch(ae.kind, ae.params, events[None], np.array([events.shape[0]])).value[0]


def decode(z: np.ndarray, n: int, ae: Autoencoder) -> np.ndarray:
    """Reconstructed (n, F) events from a single representation."""
    steps = decode_batch(ae.kind, ae.params, np.asarray(z, dtype=np.float64)[None], n)
    return np.vstack([s.value for s in steps])


def reconstruction_loss(batch, ae: Autoencoder) -> float:
    """Reconstruction loss over a list of per-subject event matrices."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    X, lengths = pad([np.atleast_2d(b) for b in batch])
    loss, _ = reconstruction_loss_batch(ae.kind, ae.params, X, lengths)
    return float(loss.value)
