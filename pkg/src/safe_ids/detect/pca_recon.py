"""PCA reconstruction-error baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..feature_select import fit_pca
from ..serialize import FORMAT_VERSION, check_version, decode_array, encode_array


@dataclass
class PcaReconModel:
    mean: np.ndarray
    components: np.ndarray  # retained orthonormal rows
    percentile: float
    threshold: float = float("nan")
    params: dict = field(default_factory=dict)

    kind = "pca"

    def score(self, X: np.ndarray) -> np.ndarray:
        """Squared distance between each centered row and its projection."""
        centered = np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean
        residual = centered - (centered @ self.components.T) @ self.components
        return np.einsum("ij,ij->i", residual, residual)

    def to_dict(self) -> dict:
        return {
            "kind": "pca",
            "version": FORMAT_VERSION,
            "percentile": self.percentile,
            "threshold": self.threshold,
            "params": self.params,
            "mean": encode_array(self.mean),
            "components": encode_array(self.components),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PcaReconModel":
        check_version(obj, "pca")
        return cls(
            decode_array(obj["mean"]),
            decode_array(obj["components"]),
            float(obj["percentile"]),
            float(obj["threshold"]),
            dict(obj.get("params", {})),
        )


def fit_pca_recon(X: np.ndarray, n_components: int, percentile: float = 99.0) -> PcaReconModel:
    """Keep the leading ``n_components`` axes of ``X``; the threshold is the
    given percentile of the training reconstruction errors."""
    if not 0.0 < percentile < 100.0:
        raise ValueError(f"percentile must lie in (0, 100), got {percentile}")
    pca = fit_pca(X)
    if not 1 <= n_components <= pca.components.shape[0]:
        raise ValueError(f"n_components must lie in [1, {pca.components.shape[0]}], got {n_components}")
    model = PcaReconModel(
        pca.mean,
        pca.components[:n_components].copy(),
        percentile,
        params={"n_components": n_components, "percentile": percentile},
    )
    model.threshold = float(np.percentile(model.score(X), percentile))
    return model
