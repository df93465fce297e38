"""Area control error, per-bus injection-error signals, and the RBF surrogate.

The injection error refines the classic tie-line-plus-bias error with the
measured gap between commanded and delivered generator power, which removes
the governor-turbine nonlinearity from the signal. Frequency-responsive
loads add a second bias; their droop behavior is learned online by an exact
RBF interpolant over sparsely infilled (frequency, response) samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_XI = 3000.0  # 1/Hz^2, kernel decays to 1/e over ~0.018 Hz
DEFAULT_D_MIN = 0.007  # Hz, keeps neighbor correlation moderate
DEFAULT_MAX_SAMPLES = 24


class InfillViolationError(ValueError):
    """Duplicate sample admitted into the surrogate."""


class IllConditioningError(RuntimeError):
    """Gram matrix condition number too large: infill spacing too small."""


def compute_ace(dPtie, B, df):
    """Classic area control error: tie-line deviation plus biased frequency."""
    return dPtie + B * df


@dataclass(frozen=True)
class AieInputs:
    """Area-level measurements needed to assign injection errors to buses."""

    dPtie: float
    df: float
    D_prime: float
    sigma: np.ndarray
    du_gov: np.ndarray
    dPm: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "du_gov", np.asarray(self.du_gov, dtype=float))
        object.__setattr__(self, "dPm", np.asarray(self.dPm, dtype=float))
        if (self.sigma < 0).any():
            raise ValueError("participation factors must be nonnegative")
        if abs(self.sigma.sum() - 1.0) > 1e-12:
            raise ValueError("participation factors must sum to 1")


def compute_aie_bus(inputs: AieInputs, bus: int, is_generator: bool = True):
    """Injection error assigned to one bus; zero off the generator buses."""
    if not is_generator:
        return 0.0
    share = inputs.sigma[bus] * (inputs.dPtie + inputs.D_prime * inputs.df)
    return share + inputs.du_gov[bus] - inputs.dPm[bus]


def compute_aie_total(inputs: AieInputs):
    """Aggregate injection error: sum of the per-generator-bus assignments."""
    return float(
        inputs.dPtie
        + inputs.D_prime * inputs.df
        + inputs.du_gov.sum()
        - inputs.dPm.sum()
    )


def gaussian_basis(x, xi):
    """exp(-xi * x^2), the interpolation kernel."""
    if xi <= 0:
        raise ValueError("shape parameter xi must be positive")
    return np.exp(-xi * np.square(x))


def build_gram(sample_df, xi):
    """Kernel matrix over sample locations; rejects exact duplicates."""
    xs = np.asarray(sample_df, dtype=float)
    diff = xs[:, None] - xs[None, :]
    if (np.abs(diff) + np.eye(len(xs)) == 0).any():
        raise InfillViolationError("duplicate sample locations")
    return gaussian_basis(diff, xi)


def fit_weights(gram, S, cond_limit=1e12):
    """Solve the interpolation system; fails loudly when near-singular."""
    gram = np.asarray(gram, dtype=float)
    cond = np.linalg.cond(gram)
    if cond > cond_limit:
        raise IllConditioningError(
            f"gram condition number {cond:.3e} exceeds {cond_limit:.0e}; "
            "infill distance too small for this kernel width"
        )
    return np.linalg.solve(gram.T, np.asarray(S, dtype=float))


@dataclass
class RbfSurrogate:
    """Exact RBF interpolant of the frequency-responsive load droop.

    Samples are admitted only when at least d_min away from every stored
    location, which keeps the kernel matrix well conditioned. When full,
    the oldest sample that is not a boundary point (min or max location)
    is evicted so the covered span is preserved.
    """

    xi: float = DEFAULT_XI
    d_min: float = DEFAULT_D_MIN
    max_samples: int = DEFAULT_MAX_SAMPLES
    sample_df: list = field(default_factory=list)
    sample_dP: list = field(default_factory=list)
    _order: list = field(default_factory=list)
    _counter: int = 0
    weights: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.sample_df)

    def infill_decide(self, df) -> bool:
        if not self.sample_df:
            return True
        return min(abs(df - x) for x in self.sample_df) >= self.d_min

    def add_sample(self, df, dP) -> None:
        if not self.infill_decide(df):
            raise InfillViolationError(
                f"sample at {df} closer than {self.d_min} to an existing one"
            )
        if self.m >= self.max_samples:
            self._evict()
        self.sample_df.append(float(df))
        self.sample_dP.append(float(dP))
        self._order.append(self._counter)
        self._counter += 1
        self.refit()

    def _evict(self) -> None:
        lo = int(np.argmin(self.sample_df))
        hi = int(np.argmax(self.sample_df))
        candidates = [i for i in range(self.m) if i not in (lo, hi)]
        victim = min(candidates, key=lambda i: self._order[i])
        for seq in (self.sample_df, self.sample_dP, self._order):
            seq.pop(victim)

    def refit(self) -> None:
        gram = build_gram(self.sample_df, self.xi)
        self.weights = fit_weights(gram, self.sample_dP)

    def gram(self) -> np.ndarray:
        return build_gram(self.sample_df, self.xi)

    def evaluate(self, df):
        """Interpolated frequency-responsive correction at df (0 when empty)."""
        if not self.sample_df:
            return 0.0
        basis = gaussian_basis(df - np.asarray(self.sample_df), self.xi)
        return float(basis @ self.weights)


def corrected_aie(aie_bus, surrogate: RbfSurrogate, df):
    """Injection error with the learned frequency-responsive bias removed."""
    return aie_bus + surrogate.evaluate(df)
