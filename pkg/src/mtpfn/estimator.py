"""scikit-learn compatible wrapper around in-context prediction."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .inference import predict_ensembled
from .model import ModelParameters


class MultitaskPFNClassifier(ClassifierMixin, BaseEstimator):
    """Predict every target column of ``Y`` jointly from the training rows in context.

    ``fit`` only stores the training rows; all work happens in
    ``predict_proba``.

    Parameters
    ----------
    model : ModelParameters or str
        Fitted weights, or a checkpoint path.
    n_ensemble : int
        Maximum number of ensemble members (1 disables ensembling).
    nominal : sequence of int
        Indices of nominal feature columns.
    """

    def __init__(self, model=None, n_ensemble=1, nominal=()):
        self.model = model
        self.n_ensemble = n_ensemble
        self.nominal = nominal

    def _params(self):
        if isinstance(self.model, ModelParameters):
            return self.model
        if self.model is None:
            raise ValueError("model is required")
        return ModelParameters.load(self.model)

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        Y = np.asarray(Y)
        if Y.shape[0] != X.shape[0]:
            raise ValueError("X and Y have different row counts")
        self._single_output = Y.ndim == 1
        self.X_ = X
        self.Y_ = Y[:, None] if Y.ndim == 1 else Y
        self.classes_ = [np.unique(self.Y_[:, t]) for t in range(self.Y_.shape[1])]
        self.n_features_in_ = X.shape[1]
        self.params_ = self._params()
        return self

    def predict_proba(self, X):
        """List with one (n_rows, n_classes_t) array per target."""
        check_is_fitted(self, "X_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        out = predict_ensembled(self.params_, self.X_, self.Y_, X,
                                max_members=self.n_ensemble, nominal=self.nominal)
        return out.probabilities

    def predict(self, X):
        probs = self.predict_proba(X)
        labels = np.column_stack([c[np.argmax(p, axis=1)] for p, c in zip(probs, self.classes_)])
        return labels[:, 0] if self._single_output else labels

    def score(self, X, Y):
        """Mean accuracy over targets."""
        pred = self.predict(X)
        Y = np.asarray(Y)
        if self._single_output:
            return float(np.mean(pred == Y))
        return float(np.mean([np.mean(pred[:, t] == Y[:, t]) for t in range(Y.shape[1])]))
