"""scikit-learn style front end to skill discovery.

``fit`` trains from scratch, ``transform`` maps states to the learned latent
space, and ``predict`` maps goal sentences to skills. Every hyperparameter of
the underlying run configuration stays reachable through ``config``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import RunConfig
from .core_math import forward


class LanguageSkillDiscovery(TransformerMixin, BaseEstimator):
    """Skill discovery guided by state descriptions.

    Parameters
    ----------
    template : str
        Describer template id; it also picks the environment unless ``env`` is set.
    env : str or None
        ``"point"`` or ``"pusher"``.
    epochs, episodes_per_epoch : int
        Training budget.
    skill_dim : int
        Dimension of the skill vector.
    seed : int
    config : dict or None
        Extra nested overrides merged into the run configuration,
        e.g. ``{"ppo": {"lr": 1e-3}}``.
    normalize : bool
        Unit-normalize skills returned by ``predict``.
    """

    def __init__(self, template="point_half_plane_N", env=None, epochs=300, episodes_per_epoch=8, skill_dim=2, seed=0, config=None, normalize=True):
        self.template = template
        self.env = env
        self.epochs = epochs
        self.episodes_per_epoch = episodes_per_epoch
        self.skill_dim = skill_dim
        self.seed = seed
        self.config = config
        self.normalize = normalize

    def _run_config(self) -> RunConfig:
        from .describer import template_env

        env = self.env or template_env(self.template)
        env = "point" if env == "any" else env
        base = RunConfig().replace(
            env={"name": env},
            describer={"template": self.template},
            skill={"dim": self.skill_dim},
            trainer={"epochs": self.epochs, "episodes_per_epoch": self.episodes_per_epoch, "seed": self.seed},
        )
        return base.replace(**self.config) if self.config else base

    def fit(self, X=None, y=None):
        """Train from a fresh initialization. ``X`` and ``y`` are ignored (the data comes from rollouts)."""
        from .embed import make_embedder
        from .trainer import train

        cfg = self._run_config()
        self.checkpoint_ = train(cfg)
        self.config_ = cfg
        ec = cfg.embedder
        self.embedder_ = make_embedder(ec.backend, ec.n_features, ec.seed, ec.tokenizer)
        self.n_features_in_ = self.checkpoint_.phi.in_dim
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint) -> "LanguageSkillDiscovery":
        from .embed import make_embedder

        cfg = checkpoint.config
        est = cls(template=cfg.describer.template, env=cfg.env.name, epochs=cfg.trainer.epochs,
                  episodes_per_epoch=cfg.trainer.episodes_per_epoch, skill_dim=cfg.skill.dim, seed=cfg.trainer.seed)
        est.checkpoint_ = checkpoint
        est.config_ = cfg
        ec = cfg.embedder
        est.embedder_ = make_embedder(ec.backend, ec.n_features, ec.seed, ec.tokenizer)
        est.n_features_in_ = checkpoint.phi.in_dim
        return est

    def transform(self, X) -> np.ndarray:
        """Latent coordinates ``phi(s)`` of each state row."""
        from .trainer import phi_features

        check_is_fitted(self, "checkpoint_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the environment state has {self.n_features_in_}")
        return forward(self.checkpoint_.phi, phi_features(self.config_, X))

    def predict(self, X) -> np.ndarray:
        """Skill vector for each goal sentence in ``X``."""
        from .skill_core import infer_skill

        check_is_fitted(self, "checkpoint_")
        if isinstance(X, str):
            X = [X]
        return np.stack([infer_skill(self.checkpoint_.psi, t, self.embedder_, self.normalize) for t in X])

    def intrinsic_reward(self, S, S_next, Z) -> np.ndarray:
        from .trainer import phi_features
        from .skill_core import intrinsic_reward

        check_is_fitted(self, "checkpoint_")
        S = check_array(S, dtype=np.float64)
        S_next = check_array(S_next, dtype=np.float64)
        Z = check_array(Z, dtype=np.float64)
        return intrinsic_reward(self.checkpoint_.phi, phi_features(self.config_, S), phi_features(self.config_, S_next), Z)
