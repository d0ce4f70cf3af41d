"""Scikit-learn style front end for the few-shot patch classifier.

``ProtoMixClassifier.fit`` takes the few labeled patches, augments them to a
fixed per-class budget, trains the attention feature extractor episodically
with mixed queries, and keeps the augmented pool as the KNN reference set.
``predict`` embeds new patches and votes among the nearest references;
``transform`` exposes the embedding for downstream use.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import PatchSample, SplitSpec, augment_target
from .episodes import EpisodeConfig
from .errors import ConfigError
from .evaluation import knn_predict
from .model import TransformerConfig, embed_patches
from .training import TrainConfig, run_schedule
from .validation import check_labels, check_patch_stack


class ProtoMixClassifier(BaseEstimator, ClassifierMixin, TransformerMixin):
    """Few-shot classifier over square hyperspectral patches.

    Parameters mirror the engine defaults: the transformer sizes, the
    episode shape (n_way defaults to the number of classes seen in fit),
    the per-class augmentation budget, and the training schedule. When
    ``fit`` is given ``source_X``/``source_y``, training pre-trains on
    source episodes for ``source_iterations`` before fine-tuning; otherwise
    the whole budget runs on the augmented target pool.
    """

    def __init__(self, d_model=100, n_heads=8, d_head=64, d_feed=1024,
                 n_encoders=2, k_shot=5, m_query=15, n_way=None,
                 augment_to=200, iterations=3000, source_iterations=1000,
                 mix="transmix", lr=1e-3, knn_k=5, batch_size=256,
                 random_state=0):
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_head
        self.d_feed = d_feed
        self.n_encoders = n_encoders
        self.k_shot = k_shot
        self.m_query = m_query
        self.n_way = n_way
        self.augment_to = augment_to
        self.iterations = iterations
        self.source_iterations = source_iterations
        self.mix = mix
        self.lr = lr
        self.knn_k = knn_k
        self.batch_size = batch_size
        self.random_state = random_state

    def _make_pool(self, X, y, encoder):
        return [
            PatchSample(pixels=np.asarray(x, dtype=np.float32), label=encoder[int(label)],
                        center=(0, 0), is_boundary=False)
            for x, label in zip(X, y)
        ]

    def fit(self, X, y, source_X=None, source_y=None):
        X = check_patch_stack(X)
        y = check_labels(y, X.shape[0])
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise ConfigError(f"need at least 2 classes to fit, got {self.classes_.size}")
        if self.augment_to < self.k_shot + self.m_query:
            raise ConfigError(
                f"augment_to ({self.augment_to}) must be >= k_shot + m_query "
                f"({self.k_shot + self.m_query}) so episodes can be sampled"
            )
        encoder = {int(c): i + 1 for i, c in enumerate(self.classes_)}
        target_pool = self._make_pool(X, y, encoder)
        spec = SplitSpec(shots_per_class=1, augment_to=self.augment_to,
                         seed=self.random_state)
        target_pool = augment_target(target_pool, spec, seed=self.random_state)

        source_pool = None
        if source_X is not None:
            source_X = check_patch_stack(source_X, patch_size=X.shape[1], name="source_X")
            source_y = check_labels(source_y, source_X.shape[0], name="source_y")
            source_classes = np.unique(source_y)
            source_encoder = {int(c): i + 1 for i, c in enumerate(source_classes)}
            source_pool = self._make_pool(source_X, source_y, source_encoder)

        model_cfg = TransformerConfig(
            d_model=self.d_model, n_heads=self.n_heads, d_head=self.d_head,
            d_feed=self.d_feed, n_encoders=self.n_encoders, patch_size=X.shape[1],
        )
        train_cfg = TrainConfig(
            lr=self.lr,
            total_iterations=self.iterations,
            source_iterations=self.source_iterations if source_pool else 0,
            mode="apnt" if source_pool else "apnt*",
            mix_mode=self.mix,
            seed=self.random_state,
        )
        episode_cfg = EpisodeConfig(
            n_way=self.n_way if self.n_way is not None else self.classes_.size,
            k_shot=self.k_shot, m_query=self.m_query, seed=self.random_state,
        )
        state, log = run_schedule(source_pool, target_pool, model_cfg, train_cfg, episode_cfg)
        self.params_ = state.params
        self.train_log_ = log
        self.patch_size_ = X.shape[1]
        self.n_bands_ = X.shape[3]
        self.reference_labels_ = np.array([s.label for s in target_pool])
        self.reference_features_ = embed_patches(
            [s.pixels for s in target_pool], "target", state.params, self.batch_size
        )
        self._decoder = {i + 1: int(c) for i, c in enumerate(self.classes_)}
        return self

    def transform(self, X):
        """Embed patches into the learned feature space."""
        check_is_fitted(self, "params_")
        X = check_patch_stack(X, patch_size=self.patch_size_, bands=self.n_bands_)
        return embed_patches(np.asarray(X, dtype=np.float64), "target", self.params_,
                             self.batch_size)

    def predict(self, X):
        features = self.transform(X)
        encoded = knn_predict(features, self.reference_features_,
                              self.reference_labels_, self.knn_k)
        return np.array([self._decoder[int(c)] for c in encoded])
