"""scikit-learn style wrapper: ``fit`` pre-trains, ``transform`` encodes."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonneg_int, check_positive_int, check_sequences
from .streaming import stream_encode
from .training import ModelConfig, TrainConfig, Trainer


class OnlineRegisterEncoder(TransformerMixin, BaseEstimator):
    """Dual-mode encoder with online registers, trained by masked prediction.

    ``X`` is a list of ``(T_i, n_features)`` frame matrices or a
    ``(n_sequences, T, n_features)`` array. ``transform`` returns encoded
    frames in the same container shape, ``d_model`` wide.

    Parameters
    ----------
    mode : {"online", "offline"}
        ``online`` streams each sequence chunk by chunk with a key/value
        cache; ``offline`` uses full-context attention.
    chunk_size, lookahead : int
        Online chunk length ``C`` and look-ahead ``L`` used by ``transform``.
        Training always samples ``(C, L)`` per batch.
    crop : int
        Training batches are random windows of at most this many frames.
    """

    def __init__(self, d_model=32, n_layers=2, n_heads=4, n_registers=1, mode="online", chunk_size=8, lookahead=0,
                 steps=500, batch_size=8, crop=48, learning_rate=5e-3, beta=1.0, seed=0):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.n_registers = n_registers
        self.mode = mode
        self.chunk_size = chunk_size
        self.lookahead = lookahead
        self.steps = steps
        self.batch_size = batch_size
        self.crop = crop
        self.learning_rate = learning_rate
        self.beta = beta
        self.seed = seed

    def _check_params(self):
        if self.mode not in ("online", "offline"):
            raise ValueError(f"mode must be 'online' or 'offline', got {self.mode!r}")
        check_positive_int(self.chunk_size, "chunk_size")
        check_nonneg_int(self.lookahead, "lookahead")
        check_nonneg_int(self.steps, "steps")
        check_positive_int(self.crop, "crop")

    def fit(self, X, y=None):
        self._check_params()
        seqs = check_sequences(X, min_length=2)
        self.n_features_in_ = seqs[0].shape[1]
        mc = ModelConfig(
            d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads, n_registers=self.n_registers,
            input_dim=0 if self.n_features_in_ == self.d_model else self.n_features_in_, seed=self.seed,
        )
        crop = min(self.crop, min(len(s) for s in seqs))
        tc = TrainConfig(steps=self.steps, batch_size=self.batch_size, min_frames=crop, max_frames=crop,
                         learning_rate=self.learning_rate, beta=self.beta, seed=self.seed)

        def windows(rng, batch, T):
            picks = rng.integers(0, len(seqs), size=batch)
            out = []
            for k in picks:
                start = int(rng.integers(0, len(seqs[k]) - T + 1))
                out.append(seqs[k][start : start + T])
            return np.stack(out)

        trainer = Trainer(mc, tc, data=windows)
        self.history_ = trainer.fit()
        self.model_ = trainer.model.eval()
        return self

    @property
    def encoder_(self):
        check_is_fitted(self, "model_")
        return self.model_.encoder

    def _encode(self, x: np.ndarray) -> np.ndarray:
        x = torch.as_tensor(x, dtype=self.model_.dtype)
        if self.mode == "offline":
            with torch.no_grad():
                return self.encoder_.encode_offline(x).numpy()
        return stream_encode(self.encoder_, x, self.chunk_size, self.lookahead)[0].numpy()

    def transform(self, X):
        check_is_fitted(self, "model_")
        self._check_params()
        seqs = check_sequences(X, n_features=self.n_features_in_)
        out = [self._encode(s) for s in seqs]
        if isinstance(X, np.ndarray) and X.ndim == 3:
            return np.stack(out)
        return out

    def transform_registers(self, X):
        """Per-chunk online register outputs, ``(n_chunks, n_registers, d_model)`` per sequence."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, n_features=self.n_features_in_)
        return [
            stream_encode(self.encoder_, torch.as_tensor(s, dtype=self.model_.dtype), self.chunk_size, self.lookahead)[1].numpy()
            for s in seqs
        ]
