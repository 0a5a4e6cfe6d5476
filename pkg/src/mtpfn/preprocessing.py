"""Context-fitted feature preprocessing shared by training and inference."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

SD_FLOOR = 1e-8


class TabularPreprocessor(TransformerMixin, BaseEstimator):
    """Z-score with context statistics, clip, and zero-fill missing values.

    Nominal columns (indices in ``nominal``) hold integer codes.  Codes not
    seen during ``fit`` map to a reserved code one past the fitted vocabulary
    before scaling.  Statistics come from the rows passed to ``fit`` only.

    Parameters
    ----------
    nominal : sequence of int, optional
        Column indices of nominal features.
    clip : float
        Standardized values are clipped to ``[-clip, clip]``.
    power : bool
        Apply ``sign(x) * sqrt(|x|)`` to numeric columns first.
    """

    def __init__(self, nominal=(), clip=4.0, power=False):
        self.nominal = nominal
        self.clip = clip
        self.power = power

    def _recode(self, X):
        X = X.copy()
        for j, vocab in self.vocab_.items():
            col = X[:, j]
            known = np.isin(col, vocab) | np.isnan(col)
            X[~known, j] = len(vocab)
            idx = np.searchsorted(vocab, col[known & ~np.isnan(col)])
            X[known & ~np.isnan(col), j] = idx
        if self.power:
            num = [j for j in range(X.shape[1]) if j not in self.vocab_]
            X[:, num] = np.sign(X[:, num]) * np.sqrt(np.abs(X[:, num]))
        return X

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        self.n_features_in_ = X.shape[1]
        self.vocab_ = {}
        for j in self.nominal:
            col = X[:, j]
            self.vocab_[j] = np.unique(col[~np.isnan(col)])
        Z = self._recode(X)
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(Z, axis=0) if len(Z) else np.zeros(Z.shape[1])
            sd = np.nanstd(Z, axis=0) if len(Z) else np.ones(Z.shape[1])
        self.mean_ = np.nan_to_num(mean)
        self.scale_ = np.where(np.nan_to_num(sd) > SD_FLOOR, np.nan_to_num(sd), 1.0)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        Z = (self._recode(X) - self.mean_) / self.scale_
        Z = np.clip(Z, -self.clip, self.clip)
        return np.nan_to_num(Z, nan=0.0)


def preprocess_split(X, split, nominal=(), power=False):
    """Fit on rows ``[:split]`` and transform all rows."""
    pre = TabularPreprocessor(nominal=nominal, power=power).fit(X[:split])
    return pre.transform(X)
