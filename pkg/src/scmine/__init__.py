"""Mining Solidity smart-contract sources: feature views, linear classifiers,
clustering, embeddings and evaluation."""

__version__ = "0.1.0"

from .extract import FeatureMode, SolidityViewExtractor, extract_identifiers, lex, render, split
from .corpus import Corpus, CorpusError, Document, SplitSpec, consolidate_labels, load_jsonl
from .features import TfidfVectorizer, Vocabulary, ctfidf, class_term_stats, top_terms
from .linmodel import LinearClassifier, OneVsRestClassifier, train
from .embed import TSNE, TruncatedSVD, truncated_svd, tsne
from .cluster import KMeans, davies_bouldin, elbow_sweep, kmeans
from .metrics import average_precision, roc_auc, wilcoxon

__all__ = [
    "__version__",
    "FeatureMode", "SolidityViewExtractor", "extract_identifiers", "lex", "render", "split",
    "Corpus", "CorpusError", "Document", "SplitSpec", "consolidate_labels", "load_jsonl",
    "TfidfVectorizer", "Vocabulary", "ctfidf", "class_term_stats", "top_terms",
    "LinearClassifier", "OneVsRestClassifier", "train",
    "TSNE", "TruncatedSVD", "truncated_svd", "tsne",
    "KMeans", "davies_bouldin", "elbow_sweep", "kmeans",
    "average_precision", "roc_auc", "wilcoxon",
]
