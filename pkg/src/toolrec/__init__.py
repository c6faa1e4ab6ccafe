"""Task-to-tool-server recommendation engine.

Dense dual-tower retrieval over shared sparse lexical vectors, fused with
rule-based structural compatibility, widened by centroid candidate expansion,
and optionally re-ordered by a constrained re-ranker with strict validation
and fallback.
"""

from .corpus import (CorpusError, DatasetSplit, InteractionSet, McpRecord,
                     TaskRecord, concat_text, load_corpus, split_dataset)
from .encoder import (DenseEmbedding, EmbeddingIndex, TowerParams,
                      encode_corpus, forward, load_checkpoint, normalize,
                      save_checkpoint, semantic_score)
from .lexical import (SparseVector, Vocabulary, VocabularyConfig,
                      build_vocabulary, l2_normalize, tokenize, vectorize)
from .metrics import EvalReport, evaluate, hits, ndcg, recall_precision_f1
from .model import LexicalVectorizer, ToolServerRecommender
from .recommender import (CandidatePool, Engine, RankedItem, RankedList,
                          RecommendConfig)
from .rerank import (BuiltinHeuristicBackend, CallableBackend, CandidateCard,
                     ExternalHTTPBackend, RerankRequest, RerankResult,
                     build_prompt, rerank, validate)
from .structural import (CompatFeatures, FusionWeights, Taxonomy,
                         ThemeSystemRules, category_feature, fuse,
                         language_feature, structural_score,
                         taxonomy_distance, theme_feature)
from .training import AdamW, Batch, TrainConfig, contrastive_loss, train

__version__ = "0.1.0"

__all__ = [
    "AdamW", "Batch", "BuiltinHeuristicBackend", "CallableBackend",
    "CandidateCard", "CandidatePool", "CompatFeatures", "CorpusError",
    "DatasetSplit", "DenseEmbedding", "EmbeddingIndex", "Engine",
    "EvalReport", "ExternalHTTPBackend", "FusionWeights", "InteractionSet",
    "LexicalVectorizer", "McpRecord", "RankedItem", "RankedList",
    "RecommendConfig", "RerankRequest", "RerankResult", "SparseVector",
    "TaskRecord", "Taxonomy", "ThemeSystemRules", "ToolServerRecommender",
    "TowerParams", "TrainConfig", "Vocabulary", "VocabularyConfig",
    "build_prompt", "build_vocabulary", "category_feature", "concat_text",
    "contrastive_loss", "encode_corpus", "evaluate", "forward", "fuse",
    "hits", "l2_normalize", "language_feature", "load_checkpoint",
    "load_corpus", "ndcg", "normalize", "recall_precision_f1",
    "rerank", "save_checkpoint", "semantic_score", "split_dataset",
    "structural_score", "taxonomy_distance", "theme_feature", "tokenize",
    "train", "validate", "vectorize",
]
