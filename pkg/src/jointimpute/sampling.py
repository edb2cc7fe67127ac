"""Sample selection and nonresponse generation.

Simple random sampling without replacement, and per-class masking of item
values according to response-pattern probabilities. Both operations are pure
functions of their inputs and an :class:`RngStream`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SurveyDataset
from .errors import DataError
from .popgen import PopulationSpec
from .rng import RngStream

__all__ = ["srswor", "generate_response", "MaskedSample"]


def srswor(population: SurveyDataset, n: int, rng: RngStream) -> SurveyDataset:
    """Draw a simple random sample of ``n`` units without replacement.

    Every returned unit carries weight N/n (inclusion probability n/N).
    Units appear in population order.
    """
    big_n = population.n
    if not 1 <= n <= big_n:
        raise DataError(f"sample size {n} outside [1, {big_n}]")
    gen = rng.generator()
    idx = np.sort(gen.permutation(big_n)[:n])
    weights = np.full(n, population.population_size / n, dtype=float)
    return population.subset(idx, weights=weights)


@dataclass(frozen=True)
class MaskedSample:
    """A sample after nonresponse, with the pre-masking truth kept aside.

    The truth channel exists only for Monte Carlo scoring; imputation code
    paths receive ``masked`` and never see ``truth``.
    """

    masked: SurveyDataset
    truth: SurveyDataset
    pattern_codes: np.ndarray  # drawn pattern per unit: 0 rr, 1 rm, 2 mr, 3 mm

    def unmasked(self) -> SurveyDataset:
        return self.truth


def generate_response(sample: SurveyDataset, spec: PopulationSpec,
                      rng: RngStream) -> MaskedSample:
    """Mask item values according to the per-class response mechanism.

    Each unit independently draws one of the patterns (rr, rm, mr, mm) with
    its class's probabilities; x is masked under mr/mm and y under rm/mm.
    """
    if sample.n_groups > spec.n_classes:
        raise DataError(
            f"sample has class {sample.n_groups} but spec defines {spec.n_classes}"
        )
    probs = spec.pattern_prob_array()
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0  # guard against cumulative rounding
    gen = rng.generator()
    u = gen.random(sample.n)
    codes = (u[:, None] > cum[sample.groups - 1]).sum(axis=1)
    x_missing = sample.x_missing | (codes >= 2)
    y_missing = sample.y_missing | (codes == 1) | (codes == 3)
    # zero out masked entries so truth cannot leak through the value columns
    masked = sample.replace_values(
        x=np.where(x_missing, 0, sample.x), x_missing=x_missing,
        y=np.where(y_missing, 0, sample.y), y_missing=y_missing,
    )
    return MaskedSample(masked=masked, truth=sample, pattern_codes=codes)
