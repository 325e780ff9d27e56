"""Synthetic flow tables with known structure, for tests and desk-scale studies.

Normal traffic: informative columns from a correlated Gaussian (random factor
loadings plus idiosyncratic noise), then given per-column offsets and scales.
Attacks are the same Gaussian, shifted and/or scaled. With ``s = severity``:

* ``shift``: mean displaced by 2.5s sd along a fixed third of the columns
  (one signature per dataset, like a single attack tool);
* ``scale``: factor and idiosyncratic spread both inflated (1 + 1.5s)x;
* ``burst``: factor spread inflated (1 + 2s)x plus a 1.5s sd offset on
  every column.

Few factors make the normal data nearly low-rank; the autoencoder then learns
to project off-manifold deviations away and its latents separate attacks
less well than the raw columns do.

Two harder regimes are available on request: ``jitter`` (a fresh random
column subset shifted per row) and ``decorrelated`` (independent columns with
the normal marginal variance, breaking the factor structure).

Noise columns are heavy-tailed log-normal draws (like byte or jitter
counters) with distinct shapes, identically distributed for both classes.
After min-max scaling their bulk is compressed near zero, so they carry
little variance; light-tailed wide noise (e.g. uniform) would instead claim
its own principal components and outrank the informative columns.
"""

from __future__ import annotations

import numpy as np

from .ingest import Dataset

REGIMES = ("shift", "scale", "burst")
ALL_REGIMES = REGIMES + ("jitter", "decorrelated")
# log-normal sigma range of the noise columns
NOISE_SIGMA = (1.5, 2.5)


def make_synthetic_flows(
    n_samples: int = 20_000,
    n_informative: int = 25,
    n_noise: int = 15,
    attack_fraction: float = 0.25,
    n_factors: int = 25,
    seed: int = 0,
    n_extra_noise: int = 0,
    shuffle_columns: bool = True,
    regimes: tuple[str, ...] = REGIMES,
    severity: float = 1.5,
) -> Dataset:
    """Labelled synthetic dataset; ``n_extra_noise`` appends further pure-noise
    columns (named ``extra_noise_*``) after everything else is drawn, so the
    base columns are identical with or without them."""
    rng = np.random.default_rng(seed)
    loadings = rng.normal(0.0, 1.0, size=(n_informative, n_factors))
    idio_sd = 0.5
    offsets = rng.uniform(0.0, 100.0, size=n_informative)
    scales = rng.uniform(0.5, 20.0, size=n_informative)
    marginal_sd = np.sqrt((loadings**2).sum(axis=1) + idio_sd**2)

    n_attack = int(round(attack_fraction * n_samples))
    n_normal = n_samples - n_attack

    def normal_block(n: int, factor_scale: float = 1.0, idio_scale: float = 1.0) -> np.ndarray:
        z = rng.normal(0.0, factor_scale, size=(n, n_factors))
        return z @ loadings.T + rng.normal(0.0, idio_sd * idio_scale, size=(n, n_informative))

    blocks = [normal_block(n_normal)]
    labels = [np.zeros(n_normal, dtype=np.int64)]
    unknown = set(regimes) - set(ALL_REGIMES)
    if unknown or not regimes:
        raise ValueError(f"regimes must be a non-empty subset of {ALL_REGIMES}")
    per_regime = np.full(len(regimes), n_attack // len(regimes))
    per_regime[: n_attack % len(regimes)] += 1
    for regime, n in zip(regimes, per_regime):
        if regime == "shift":
            cols = rng.choice(n_informative, size=n_informative // 3, replace=False)
            signs = rng.choice([-1.0, 1.0], size=cols.size)
            x = normal_block(n)
            x[:, cols] += signs * 2.5 * severity * marginal_sd[cols]
        elif regime == "scale":
            spread = 1.0 + 1.5 * severity
            x = normal_block(n, factor_scale=spread, idio_scale=spread)
        elif regime == "jitter":
            x = normal_block(n)
            for row in x:
                cols = rng.choice(n_informative, size=n_informative // 3, replace=False)
                row[cols] += rng.choice([-1.0, 1.0], size=cols.size) * 2.5 * marginal_sd[cols]
        elif regime == "burst":
            x = normal_block(n, factor_scale=1.0 + 2.0 * severity) + 1.5 * severity * marginal_sd
        else:
            x = rng.normal(0.0, 1.0, size=(n, n_informative)) * marginal_sd
        blocks.append(x)
        labels.append(np.ones(n, dtype=np.int64))

    informative = np.vstack(blocks) * scales + offsets
    y = np.concatenate(labels)
    shapes = np.linspace(NOISE_SIGMA[0], NOISE_SIGMA[1], n_noise)
    noise = np.column_stack([rng.lognormal(0.0, s, size=n_samples) for s in shapes]) if n_noise else np.zeros((n_samples, 0))

    X = np.hstack([informative, noise])
    names = [f"inf_{i:02d}" for i in range(n_informative)] + [f"noise_{i:02d}" for i in range(n_noise)]
    if shuffle_columns:
        perm = rng.permutation(X.shape[1])
        X = X[:, perm]
        names = [names[i] for i in perm]
    row_perm = rng.permutation(n_samples)
    X, y = X[row_perm], y[row_perm]

    if n_extra_noise:
        extra_rng = np.random.default_rng([seed, 1])
        extra_shapes = extra_rng.uniform(NOISE_SIGMA[0], NOISE_SIGMA[1], size=n_extra_noise)
        extra = np.column_stack([extra_rng.lognormal(0.0, s, size=n_samples) for s in extra_shapes])
        X = np.hstack([X, extra])
        names += [f"extra_noise_{i:02d}" for i in range(n_extra_noise)]
    return Dataset(X, y, tuple(names))
