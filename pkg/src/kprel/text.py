"""Text normalization and token-overlap features for keyphrase/title pairs.

Everything here is a pure function: no caches, no global state, safe to
call concurrently.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InputError

_TOKEN_RE = re.compile(r"[a-z0-9]+")

FEATURE_NAMES = (
    "jaccard",
    "kp_coverage",
    "title_coverage",
    "trigram_cosine",
    "len_diff",
    "cat_overlap",
    "bias",
)
N_FEATURES = len(FEATURE_NAMES)

# Models record this hash; scoring refuses feature vectors built under a
# different component order.
FEATURE_SCHEMA_HASH = hashlib.sha256(",".join(FEATURE_NAMES).encode("utf-8")).hexdigest()[:16]


def normalize(text: str) -> list[str]:
    """Lowercase `text` and split on every non-alphanumeric character.

    Empty fragments are dropped; token order and duplicates are preserved.
    """
    return _TOKEN_RE.findall(text.lower())


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    """Ratio of distinct-token intersection to union.

    Raises InputError when both token sets are empty (0/0 is undefined and
    silently mapping it to a number would corrupt downstream calibration).
    """
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        raise InputError("jaccard undefined: both token sets are empty")
    return len(sa & sb) / len(union)


def _trigram_counts(tokens: Sequence[str]) -> Counter[str]:
    padded = "  " + " ".join(tokens) + "  "
    return Counter(padded[i : i + 3] for i in range(len(padded) - 2))


def trigram_cosine(a: Sequence[str], b: Sequence[str]) -> float:
    """Cosine similarity between padded character-trigram count vectors.

    Norms are computed in exact integer arithmetic so identical inputs
    yield exactly 1.0.
    """
    ca = _trigram_counts(a)
    cb = _trigram_counts(b)
    dot = sum(ca[g] * cb[g] for g in ca.keys() & cb.keys())
    if dot == 0:
        return 0.0
    na2 = sum(c * c for c in ca.values())
    nb2 = sum(c * c for c in cb.values())
    return dot / math.sqrt(na2 * nb2)


def extract_features(keyphrase: str, category: str, title: str) -> np.ndarray:
    """Build the 7-component feature vector for one (keyphrase, category, title).

    Component order follows FEATURE_NAMES. All components lie in [0, 1];
    the last is a constant 1.0 bias term.

    Raises InputError if the keyphrase or title normalizes to no tokens.
    """
    kp = normalize(keyphrase)
    ti = normalize(title)
    if not kp:
        raise InputError(f"keyphrase normalizes to no tokens: {keyphrase!r}")
    if not ti:
        raise InputError(f"title normalizes to no tokens: {title!r}")
    cat = normalize(category)

    kp_set, ti_set, cat_set = set(kp), set(ti), set(cat)
    inter = len(kp_set & ti_set)
    return np.array(
        [
            inter / len(kp_set | ti_set),
            inter / len(kp_set),
            inter / len(ti_set),
            trigram_cosine(kp, ti),
            min(abs(len(kp_set) - len(ti_set)) / 10.0, 1.0),
            len(kp_set & cat_set) / len(kp_set | cat_set),
            1.0,
        ],
        dtype=np.float64,
    )


def featurize_pairs(triples: Iterable[tuple[str, str, str]]) -> np.ndarray:
    """Stack extract_features rows for (keyphrase, category, title) triples."""
    rows = [extract_features(k, c, t) for k, c, t in triples]
    if not rows:
        return np.empty((0, N_FEATURES), dtype=np.float64)
    return np.array(rows, dtype=np.float64)


class PairFeaturizer(BaseEstimator, TransformerMixin):
    """Stateless sklearn transformer from string triples to feature rows.

    Input is a sequence of (keyphrase, category, title) triples; output is
    an (n, 7) float matrix, so the featurizer composes with standard
    estimators in a Pipeline.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return featurize_pairs(X)

    def get_feature_names_out(self, input_features=None) -> np.ndarray:
        return np.asarray(FEATURE_NAMES, dtype=object)
