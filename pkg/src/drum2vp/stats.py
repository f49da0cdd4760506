"""Exact binomial confidence intervals and binary-criterion scoring."""

from __future__ import annotations

from dataclasses import dataclass

from scipy.stats import beta

CHANCE_LEVEL = 0.5


@dataclass(frozen=True)
class BinaryCriterionStats:
    criterion: str
    successes: int
    total: int
    mean: float
    ci_low: float
    ci_high: float
    significant_vs_chance: bool

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "successes": self.successes,
            "total": self.total,
            "mean": self.mean,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "significant_vs_chance": self.significant_vs_chance,
        }


def clopper_pearson(k: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    """Exact binomial confidence interval from Beta quantiles.

    Lower bound is 0 when k == 0 and upper bound is 1 when k == n.
    """
    if n < 1 or k < 0 or k > n:
        raise ValueError(f"invalid counts k={k}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    alpha = 1.0 - confidence
    low = 0.0 if k == 0 else float(beta.ppf(alpha / 2.0, k, n - k + 1))
    high = 1.0 if k == n else float(beta.ppf(1.0 - alpha / 2.0, k + 1, n - k))
    return low, high


def binary_criterion_stats(criterion: str, successes: int, total: int,
                           confidence: float = 0.99) -> BinaryCriterionStats:
    """Mean, exact CI, and chance-level significance for one binary criterion."""
    low, high = clopper_pearson(successes, total, confidence)
    significant = not (low <= CHANCE_LEVEL <= high)
    return BinaryCriterionStats(
        criterion=criterion,
        successes=successes,
        total=total,
        mean=successes / total,
        ci_low=low,
        ci_high=high,
        significant_vs_chance=significant,
    )
