"""scikit-learn style classifier that keeps what unlearning needs."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset
from .exceptions import StateError
from .hessian import HvpConfig
from .nn import LossSpec, make_mlp, softmax
from .unlearn import (TrainConfig, amnesiac_unlearn, retrain_oracle, single_gradient_unlearn, train,
                      verification_error)


class SGDUnlearningClassifier(ClassifierMixin, BaseEstimator):
    """MLP trained by logged mini-batch SGD, with batch-level unlearning.

    ``fit`` runs ``pretrain_steps`` then ``finetune_steps`` SGD steps and
    records the run. ``unlearn`` removes fine-tune batch
    ``target_batch_index`` and ``verification_error`` compares the result
    with retraining from the checkpoint at ``pretrain_steps``.
    """

    def __init__(self, hidden=(16, 16), activation="tanh", eta=0.05, batch_size=32, pretrain_steps=0,
                 finetune_steps=100, loss="ce", gamma=0.0, lam=0.0, sigma_every=20, target_batch_index=0,
                 random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.eta = eta
        self.batch_size = batch_size
        self.pretrain_steps = pretrain_steps
        self.finetune_steps = finetune_steps
        self.loss = loss
        self.gamma = gamma
        self.lam = lam
        self.sigma_every = sigma_every
        self.target_batch_index = target_batch_index
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(eta=self.eta, batch_size=self.batch_size, pretrain_steps=self.pretrain_steps,
                           finetune_steps=self.finetune_steps, loss=LossSpec(self.loss, self.gamma, self.lam),
                           seed=self.random_state, sigma_every=self.sigma_every,
                           target_batch_index=self.target_batch_index, hvp=HvpConfig())

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need samples of at least two classes; got one class")
        cfg = self._train_config()
        self.dataset_ = Dataset("fit", X, encoded.astype(np.int64), np.arange(X.shape[0]),
                                np.arange(0), "csv")
        model0 = make_mlp([X.shape[1], *self.hidden, self.classes_.size], self.activation,
                          seed=self.random_state)
        self.model_, self.run_ = train(model0, self.dataset_, cfg)
        self.unlearned_ = False
        return self

    def _logits(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.model_.forward(X)

    def decision_function(self, X):
        """Logits; for two classes the logit margin of ``classes_[1]`` (sklearn convention)."""
        z = self._logits(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def predict_proba(self, X):
        return softmax(self._logits(X))

    def predict(self, X):
        z = self._logits(X)
        return self.classes_[np.argmax(z, axis=1)]

    @property
    def unlearning_error_(self):
        check_is_fitted(self, "run_")
        return self.run_.unlearning_error_at()

    @property
    def forget_set_(self):
        """Training-row indices of the batch that ``unlearn`` removes."""
        check_is_fitted(self, "run_")
        return self.run_.schedule[self.target_batch_index]

    def unlearn(self, method="single_gradient", gradient_point="at_initial"):
        check_is_fitted(self, "run_")
        if self.unlearned_:
            raise StateError("unlearn was already applied to this fit")
        target = self.dataset_.batch(self.forget_set_)
        if method == "single_gradient":
            self.model_ = single_gradient_unlearn(self.run_, self.model_, target, self.eta, len(target),
                                                  m=len(self.run_.target_positions),
                                                  gradient_point=gradient_point)
        elif method == "amnesiac":
            self.model_ = amnesiac_unlearn(self.run_, self.model_)
        else:
            raise ValueError(f"unknown method {method!r}")
        self.unlearned_ = True
        return self

    def retrained_params(self):
        check_is_fitted(self, "run_")
        model_n = self.model_.with_params(self.run_.checkpoints[self.run_.start_step])
        return retrain_oracle(model_n, self.dataset_, self._train_config(), self.run_.target_positions,
                              schedule=self.run_.schedule).params

    def verification_error(self):
        """``|w'' - w'|`` between the current weights and retraining without the forgotten batch."""
        return verification_error(self.model_.params, self.retrained_params())
