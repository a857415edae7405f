from .base import Scorer, checked_scores
from .logistic import LogisticBaseline, LogisticFitConfig, fit_logistic
from .score_set import ScoreSet, load_score_set, write_score_set

__all__ = [
    "LogisticBaseline",
    "LogisticFitConfig",
    "ScoreSet",
    "Scorer",
    "checked_scores",
    "fit_logistic",
    "load_score_set",
    "write_score_set",
]
