"""Scikit-learn estimator wrapper around the refinement stack.

`DarcClipClassifier` takes the two pooled modality embeddings concatenated
column-wise — ``X[:, :d_img]`` is the image embedding, the rest is the text
embedding — so it slots into pipelines, cross-validation, and grid search
like any other classifier.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import EmbeddingBundle, TaskSpec, stratified_split
from .errors import ConfigurationError
from .model import DarcModel, ModelConfig
from .train import TrainConfig, softmax_probs, train


def split_modalities(X: np.ndarray, d_img: int) -> tuple[np.ndarray, np.ndarray]:
    """Split column-concatenated features into (image, text) blocks."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ConfigurationError(f"X must be 2-D (n_samples, d_img + d_txt), got shape {X.shape}")
    if not 0 < d_img < X.shape[1]:
        raise ConfigurationError(
            f"d_img={d_img} must split {X.shape[1]} feature columns into two non-empty blocks"
        )
    return X[:, :d_img], X[:, d_img:]


class DarcClipClassifier(ClassifierMixin, BaseEstimator):
    """Multimodal refinement-stack classifier with a scikit-learn interface.

    Parameters
    ----------
    d_img : int or None
        Width of the image block at the start of each row of X. None splits
        the columns evenly in half.
    d_map : int
        Shared refinement width.
    n_blocks, n_heads, bottleneck_ratio : int
        Stack depth, attention heads, and adapter bottleneck ratio.
    lambda_init, sigma_scale : float
        Initial adapter-branch scale and cosine-logit scale.
    use_acar, use_dfa, use_sai, use_lp : bool
        Component toggles; see :class:`~darcclip.model.ModelConfig`.
    epochs, batch_size, learning_rate, weight_decay : training protocol.
    val_fraction : float
        Stratified share of the training data held out to pick the best
        epoch by validation AUROC.
    class_weighting : bool
        Inverse-frequency class weights in the loss.
    random_state : int
        Seeds initialisation, the internal split, and batch shuffling.

    Attributes
    ----------
    classes_ : ndarray
        Sorted unique labels seen in fit.
    model_ : DarcModel
        The trained stack, holding the best-epoch parameters.
    train_result_ : TrainResult
        Per-epoch history and the retained best validation report.
    """

    def __init__(
        self,
        d_img: int | None = None,
        d_map: int = 64,
        n_blocks: int = 2,
        n_heads: int = 4,
        bottleneck_ratio: int = 4,
        lambda_init: float = 0.05,
        sigma_scale: float = 30.0,
        use_acar: bool = True,
        use_dfa: bool = True,
        use_sai: bool = True,
        use_lp: bool = True,
        epochs: int = 15,
        batch_size: int = 32,
        learning_rate: float = 1e-4,
        weight_decay: float = 1e-4,
        val_fraction: float = 0.1,
        class_weighting: bool = False,
        prototypes: np.ndarray | None = None,
        random_state: int = 0,
    ):
        self.d_img = d_img
        self.d_map = d_map
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.bottleneck_ratio = bottleneck_ratio
        self.lambda_init = lambda_init
        self.sigma_scale = sigma_scale
        self.use_acar = use_acar
        self.use_dfa = use_dfa
        self.use_sai = use_sai
        self.use_lp = use_lp
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.class_weighting = class_weighting
        self.prototypes = prototypes
        self.random_state = random_state

    def _image_width(self, n_features: int) -> int:
        if self.d_img is not None:
            return self.d_img
        if n_features % 2:
            raise ConfigurationError(
                f"cannot split {n_features} feature columns evenly; pass d_img explicitly"
            )
        return n_features // 2

    def fit(self, X, y):
        """Train on concatenated (image | text) rows with integer-like labels."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ConfigurationError("fit needs at least 2 classes")
        self.n_features_in_ = X.shape[1]
        d_img = self._image_width(X.shape[1])
        images, texts = split_modalities(X, d_img)

        bundle = EmbeddingBundle(
            images=images[:, None, :],
            texts=texts[:, None, :],
            labels=encoded[:, None],
            tasks=[TaskSpec("fit", int(self.classes_.size))],
        )
        config = ModelConfig(
            n_classes=int(self.classes_.size),
            d_in_img=d_img,
            d_in_txt=X.shape[1] - d_img,
            d_map=self.d_map,
            n_blocks=self.n_blocks,
            n_heads=self.n_heads,
            bottleneck_ratio=self.bottleneck_ratio,
            lambda_init=self.lambda_init,
            sigma_scale=self.sigma_scale,
            use_acar=self.use_acar,
            use_dfa=self.use_dfa,
            use_sai=self.use_sai,
            use_lp=self.use_lp,
        )
        tcfg = TrainConfig(
            task_index=0,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.random_state,
            class_weighting=self.class_weighting,
            val_fraction=self.val_fraction,
        )
        split = stratified_split(bundle, 0, (1.0 - self.val_fraction, self.val_fraction), self.random_state)
        self.model_ = DarcModel(config, seed=self.random_state, prototypes=self.prototypes)
        self.train_result_ = train(self.model_, bundle, split, tcfg)
        return self

    def _forward(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ConfigurationError(f"X has {X.shape[1]} features but fit saw {self.n_features_in_}")
        images, texts = split_modalities(X, self._image_width(X.shape[1]))
        return self.model_.predict_logits(images[:, None, :], texts[:, None, :])

    def decision_function(self, X) -> np.ndarray:
        """Cosine logits; 1-D (class-1 minus class-0) for binary problems."""
        logits = self._forward(X)
        if self.classes_.size == 2:
            return logits[:, 1] - logits[:, 0]
        return logits

    def predict_proba(self, X) -> np.ndarray:
        return softmax_probs(self._forward(X))

    def predict(self, X) -> np.ndarray:
        logits = self._forward(X)
        return self.classes_[logits.argmax(axis=1)]
