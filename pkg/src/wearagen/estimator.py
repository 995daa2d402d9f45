"""scikit-learn compatible wrappers.

``ActivityBinner`` is a transformer from channel values to bin indices.
``ActivityTransformer`` fits the multi-task causal transformer on windows of
bin indices and exposes next-day prediction and autoregressive sampling.
Both follow the usual estimator contract (constructor arguments stored
verbatim, learned state in trailing-underscore attributes), so
``get_params``/``set_params``/``clone`` work as expected.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_values, check_windows
from .data import ScalerBinSpec, dequantize_array, quantize_array
from .generate import GenerationConfig, GenerationResult, generate
from .model import ModelConfig, forward, load_checkpoint, predict_proba_last, save_checkpoint
from .train import TrainConfig, evaluate_loss, train


class ActivityBinner(TransformerMixin, BaseEstimator):
    """Min/max scale each channel with global bounds and bin into ``num_bins``.

    Parameters
    ----------
    num_bins : int, default=100
        Number of evenly spaced bins per channel.
    """

    def __init__(self, num_bins=100):
        self.num_bins = num_bins

    def fit(self, X, y=None):
        X = check_values(X).reshape(-1, 3)
        self.spec_ = ScalerBinSpec(tuple(float(v) for v in X.min(axis=0)),
                                   tuple(float(v) for v in X.max(axis=0)), int(self.num_bins))
        self.n_features_in_ = 3
        return self

    @classmethod
    def from_spec(cls, spec: ScalerBinSpec) -> "ActivityBinner":
        self = cls(num_bins=spec.num_bins)
        self.spec_ = spec
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return quantize_array(check_values(X), self.spec_)

    def inverse_transform(self, X):
        check_is_fitted(self, "spec_")
        return dequantize_array(check_windows(np.asarray(X).reshape(-1, 1, 3), self.spec_.num_bins)
                                .reshape(np.shape(X)), self.spec_)


class ActivityTransformer(BaseEstimator):
    """Decoder-only multi-task transformer over 3-channel bin sequences.

    ``fit`` expects windows of bin indices with shape ``(n, seq_len, 3)``.
    Defaults: 64-wide embeddings, 3 blocks of 4-head causal attention with a
    256-unit GeLU feed-forward layer, dropout 0.1, and Adam at 1e-3 divided
    by 10 every 5 of 15 epochs.
    """

    def __init__(self, d_model=64, num_heads=4, num_blocks=3, ffn_hidden=256, num_bins=100,
                 seq_len=21, dropout=0.1, epochs=15, learning_rate=1e-3, decay_factor=10.0,
                 decay_interval=5, batch_size=64, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 dtype="float32", random_state=0):
        self.d_model = d_model
        self.num_heads = num_heads
        self.num_blocks = num_blocks
        self.ffn_hidden = ffn_hidden
        self.num_bins = num_bins
        self.seq_len = seq_len
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.decay_factor = decay_factor
        self.decay_interval = decay_interval
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.dtype = dtype
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, num_heads=self.num_heads,
                           num_blocks=self.num_blocks, ffn_hidden=self.ffn_hidden,
                           num_bins=self.num_bins, seq_len=self.seq_len, dropout_p=self.dropout)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.learning_rate,
                           decay_factor=self.decay_factor, decay_interval=self.decay_interval,
                           batch_size=self.batch_size, beta1=self.beta1, beta2=self.beta2,
                           eps=self.epsilon, seed=int(self.random_state or 0), dtype=self.dtype)

    def fit(self, X, y=None, X_val=None, out_dir=None, max_steps=None, checkpoint_extra=None):
        cfg = self._model_config()
        X = check_windows(X, cfg.num_bins, cfg.seq_len)
        if X_val is not None:
            X_val = check_windows(X_val, cfg.num_bins, cfg.seq_len)
        result = train(X, cfg, self._train_config(), val_windows=X_val, out_dir=out_dir,
                       max_steps=max_steps, checkpoint_extra=checkpoint_extra)
        self.model_config_ = cfg
        self.params_ = result.params
        self.loss_log_ = result.loss_log
        self.val_log_ = result.val_log
        self.checkpoints_ = result.checkpoints
        self.n_windows_seen_ = len(X)
        return self

    def logits(self, X):
        check_is_fitted(self, "params_")
        X = check_windows(X, self.model_config_.num_bins, self.model_config_.seq_len,
                          allow_shorter=True)
        return forward(X, self.params_, self.model_config_, training=False, keep_cache=False).logits

    def predict_proba(self, X):
        """Next-day bin distributions from the last position, ``(n, 3, num_bins)``."""
        check_is_fitted(self, "params_")
        X = check_windows(X, self.model_config_.num_bins, self.model_config_.seq_len,
                          allow_shorter=True)
        return predict_proba_last(X, self.params_, self.model_config_)

    def predict(self, X):
        """Most probable next-day bin per channel, ``(n, 3)``."""
        return np.argmax(self.predict_proba(X), axis=-1)

    def score(self, X, y=None):
        """Negative teacher-forced combined loss (equal task weights); higher is better."""
        check_is_fitted(self, "params_")
        X = check_windows(X, self.model_config_.num_bins, self.model_config_.seq_len)
        return -evaluate_loss(X, self.params_, self.model_config_)["combined"]

    def generate(self, X, spec: ScalerBinSpec, horizon=120, temperatures=(1.0, 2.0, 2.0),
                 random_state=0, prompt_ids=None) -> GenerationResult:
        check_is_fitted(self, "params_")
        X = check_windows(X, self.model_config_.num_bins, self.model_config_.seq_len)
        cfg = GenerationConfig(horizon=horizon, temperatures=tuple(temperatures),
                               seed=int(random_state or 0))
        return generate(X, self.params_, self.model_config_, spec, cfg, prompt_ids)

    def sample(self, X, horizon=120, temperatures=(1.0, 2.0, 2.0), random_state=0):
        """Autoregressively sampled bins, ``(n, horizon, 3)``."""
        check_is_fitted(self, "params_")
        nb = self.model_config_.num_bins
        dummy = ScalerBinSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), nb)
        return self.generate(X, dummy, horizon, temperatures, random_state).bins

    def save(self, path, extra=None):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, self.model_config_, extra)

    @classmethod
    def load(cls, path):
        params, cfg, extra = load_checkpoint(path)
        self = cls(d_model=cfg.d_model, num_heads=cfg.num_heads, num_blocks=cfg.num_blocks,
                   ffn_hidden=cfg.ffn_hidden, num_bins=cfg.num_bins, seq_len=cfg.seq_len,
                   dropout=cfg.dropout_p)
        self.model_config_ = cfg
        self.params_ = params
        self.checkpoint_extra_ = extra
        return self
