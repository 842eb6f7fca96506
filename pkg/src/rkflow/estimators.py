"""scikit-learn style wrappers.

``RKFlowInverter`` treats inversion as ``transform`` (latents to noise) and
denoising as ``inverse_transform``; each row of ``X`` is one flattened
latent.  ``DDTAEditor`` maps source latents to edited latents.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ddta import ManipulationPlan
from .pipeline import EditConfig, edit
from .solver import DENOISE, INVERT, make_time_grid, solve
from .tableau import resolve_tableau, validate_tableau
from .velocity import ToyMMDiT, toy_mmdit_new


def _latent_shape(field, n_features):
    if isinstance(field, ToyMMDiT):
        shape = field.cfg.latent_shape
        if int(np.prod(shape)) != n_features:
            raise ValueError(f"X has {n_features} features, model latents have {int(np.prod(shape))}")
        return shape
    return (n_features,)


class RKFlowInverter(TransformerMixin, BaseEstimator):
    """Invert latents to noise and back with an explicit Runge-Kutta tableau.

    Parameters
    ----------
    field : VelocityField, default=None
        Velocity field; ``None`` builds the default toy MM-DiT.
    tableau : str or ButcherTableau, default="classic4"
    n_steps : int, default=30
    guidance : float, default=1.0
    prompt : sequence of int, default=None
        Token ids for the toy model's condition (ignored by analytic fields).
    reuse : bool, default=False
        Midpoint slope reuse; requires a ``b = [0, 1]`` tableau.
    """

    def __init__(self, field=None, tableau="classic4", n_steps=30, guidance=1.0, prompt=None, reuse=False):
        self.field = field
        self.tableau = tableau
        self.n_steps = n_steps
        self.guidance = guidance
        self.prompt = prompt
        self.reuse = reuse

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        tab = resolve_tableau(self.tableau)
        problems = validate_tableau(tab)
        if problems:
            raise ValueError(f"invalid tableau: {problems}")
        self.field_ = self.field if self.field is not None else toy_mmdit_new()
        self.tableau_ = tab
        self.grid_ = make_time_grid(self.n_steps)
        self.latent_shape_ = _latent_shape(self.field_, X.shape[1])
        self.condition_ = (
            self.field_.embed_prompt(self.prompt) if self.prompt is not None and hasattr(self.field_, "embed_prompt") else None
        )
        self.n_features_in_ = X.shape[1]
        return self

    def _run(self, X, direction):
        check_is_fitted(self, "tableau_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = np.empty_like(X)
        for k, row in enumerate(X):
            res = solve(
                self.field_,
                row.reshape(self.latent_shape_),
                self.grid_,
                direction,
                self.tableau_,
                self.condition_,
                self.guidance,
                self.reuse,
            )
            out[k] = res.final.reshape(-1)
        return out

    def transform(self, X):
        return self._run(X, INVERT)

    def inverse_transform(self, X):
        return self._run(X, DENOISE)

    def score(self, X, y=None):
        """Negative mean relative reconstruction error of invert-then-denoise."""
        X = check_array(X, dtype=float)
        rec = self.inverse_transform(self.transform(X))
        err = np.linalg.norm(rec - X, axis=1) / np.maximum(np.linalg.norm(X, axis=1), 1e-30)
        return -float(err.mean())


class DDTAEditor(TransformerMixin, BaseEstimator):
    """Edit latents from a source prompt to a target prompt with decoupled-attention control."""

    def __init__(
        self,
        field=None,
        source_prompt=(1,),
        target_prompt=(2,),
        tableau="kutta3",
        n_steps=8,
        plan=None,
        guidance_invert=1.0,
        guidance_edit=3.0,
    ):
        self.field = field
        self.source_prompt = source_prompt
        self.target_prompt = target_prompt
        self.tableau = tableau
        self.n_steps = n_steps
        self.plan = plan
        self.guidance_invert = guidance_invert
        self.guidance_edit = guidance_edit

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.field_ = self.field if self.field is not None else toy_mmdit_new()
        if not isinstance(self.field_, ToyMMDiT):
            raise TypeError("DDTAEditor needs an attention model such as ToyMMDiT")
        plan = self.plan if self.plan is not None else ManipulationPlan.default()
        tab = resolve_tableau(self.tableau)
        plan.validate_d_list(self.n_steps * tab.r)
        self.config_ = EditConfig(
            list(self.source_prompt),
            list(self.target_prompt),
            self.tableau,
            self.n_steps,
            plan,
            self.guidance_invert,
            self.guidance_edit,
        )
        self.latent_shape_ = _latent_shape(self.field_, X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        self.deviations_ = []
        out = np.empty_like(X)
        for k, row in enumerate(X):
            rep = edit(self.field_, row.reshape(self.latent_shape_), self.config_)
            out[k] = rep.edited.reshape(-1)
            self.deviations_.append(rep.deviation_from_source)
        return out
