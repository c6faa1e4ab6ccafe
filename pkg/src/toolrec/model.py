"""Estimator-style wrappers around the pipeline.

`LexicalVectorizer` is a fit/transform text vectorizer; `ToolServerRecommender`
bundles vocabulary building, tower training, index construction and inference
behind a single fit/recommend object with sklearn parameter semantics, so the
whole system can be configured, cloned and inspected like any other estimator.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corpus import concat_text, split_dataset
from .lexical import (Vocabulary, VocabularyConfig, build_vocabulary,
                      embed_text, vectors_to_csr)
from .metrics import DEFAULT_KS, evaluate
from .recommender import Engine, RecommendConfig
from .structural import FusionWeights, Taxonomy, ThemeSystemRules
from .training import TrainConfig, train


class LexicalVectorizer(BaseEstimator, TransformerMixin):
    """Fit a shared vocabulary, transform texts to unit-norm sparse rows."""

    def __init__(self, min_doc_freq: int = 1, max_doc_freq_ratio: float = 1.0,
                 use_idf: bool = True):
        self.min_doc_freq = min_doc_freq
        self.max_doc_freq_ratio = max_doc_freq_ratio
        self.use_idf = use_idf

    def fit(self, texts, y=None):
        self.vocabulary_ = build_vocabulary(texts, VocabularyConfig(
            min_doc_freq=self.min_doc_freq,
            max_doc_freq_ratio=self.max_doc_freq_ratio,
            use_idf=self.use_idf))
        return self

    def transform(self, texts):
        if not hasattr(self, "vocabulary_"):
            raise NotFittedError("LexicalVectorizer is not fitted yet")
        return vectors_to_csr([embed_text(t, self.vocabulary_) for t in texts])


class ToolServerRecommender(BaseEstimator):
    """End-to-end recommender with estimator parameter handling.

    fit() builds the vocabulary over all corpus texts, trains both towers on
    the train split, keeps the best-validation checkpoint, and precomputes the
    server index. recommend()/predict() then run the full candidate pipeline.
    """

    def __init__(self, n_layers: int = 3, hidden_dim: int = 512,
                 out_dim: int = 256, dropout_rate: float = 0.2,
                 batch_size: int = 256, epochs: int = 200,
                 learning_rate: float = 1e-3, weight_decay: float = 0.01,
                 temperature: float = 0.07, loss: str = "symmetric",
                 eval_every: int = 1, seed: int = 0,
                 k1: int = 20, k2: int = 50, k: int = 10,
                 alpha_sem: float = 0.9, alpha_str: float = 0.1,
                 min_doc_freq: int = 1, use_idf: bool = True):
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.dropout_rate = dropout_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.temperature = temperature
        self.loss = loss
        self.eval_every = eval_every
        self.seed = seed
        self.k1 = k1
        self.k2 = k2
        self.k = k
        self.alpha_sem = alpha_sem
        self.alpha_str = alpha_str
        self.min_doc_freq = min_doc_freq
        self.use_idf = use_idf

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            temperature=self.temperature, seed=self.seed,
            eval_every=self.eval_every, n_layers=self.n_layers,
            hidden_dim=self.hidden_dim, out_dim=self.out_dim,
            dropout_rate=self.dropout_rate, loss=self.loss)

    def recommend_config(self, k: int | None = None) -> RecommendConfig:
        return RecommendConfig(k1=self.k1, k2=self.k2, k=k or self.k)

    def fusion_weights(self) -> FusionWeights:
        return FusionWeights(alpha_sem=self.alpha_sem, alpha_str=self.alpha_str)

    def fit(self, servers, tasks, interactions, taxonomy: Taxonomy,
            split=None, rules: ThemeSystemRules | None = None, log_path=None):
        texts = ([concat_text(t) for t in tasks.values()]
                 + [concat_text(m) for m in servers.values()])
        self.vocabulary_ = build_vocabulary(texts, VocabularyConfig(
            min_doc_freq=self.min_doc_freq, use_idf=self.use_idf))
        if split is None:
            split = split_dataset(interactions.task_ids(), self.seed)
        self.split_ = split
        self.train_result_ = train(servers, tasks, interactions, split,
                                   self.vocabulary_, self.train_config(),
                                   log_path=log_path)
        self.engine_ = Engine(
            task_tower=self.train_result_.task_tower,
            server_tower=self.train_result_.server_tower,
            vocab=self.vocabulary_,
            servers=servers,
            taxonomy=taxonomy,
            weights=self.fusion_weights(),
            rules=rules)
        self.tasks_ = dict(tasks)
        self.interactions_ = interactions
        return self

    def _check_fitted(self):
        if not hasattr(self, "engine_"):
            raise NotFittedError("ToolServerRecommender is not fitted yet")

    def recommend(self, task, k: int | None = None, backend=None):
        self._check_fitted()
        return self.engine_.recommend(task, self.recommend_config(k), backend)

    def predict(self, tasks, backend=None):
        """Ranked id tuples, one per task record."""
        self._check_fitted()
        return [self.recommend(task, backend=backend).ids() for task in tasks]

    def evaluate(self, task_ids=None, ks=DEFAULT_KS, backend=None):
        """Macro metrics over a split (defaults to the held-out test split)."""
        self._check_fitted()
        if task_ids is None:
            task_ids = self.split_.test
        k_max = max(ks)

        def ranker(task_id):
            return self.recommend(self.tasks_[task_id], k=k_max,
                                  backend=backend).ids()

        return evaluate(ranker, task_ids, self.interactions_, ks)
