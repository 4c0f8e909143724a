"""Slow self-consistency checks of the ARD fit on synthetic data.

These complement the acceptance suite with scenario-level fit properties:
recovery of the pairwise geometry at moderate size, and the behavior of the
distance-weight estimate when the data carry no distance signal at all.
"""

import os

import numpy as np
import pytest

from ardnet import rng as rngmod
from ardnet.ard import TraitConfig, assign_traits, build_ard
from ardnet.estimate import FitConfig, fit_mle, recovery_error
from ardnet.netgen import GenConfig, sample_graph, sample_parameters
from ardnet.parallel import parallel_map

THREADS = min(8, os.cpu_count() or 1)


def _zeta_zero_rep(rep):
    gen = rngmod.derive(7100, rep)
    n = 400
    theta = sample_parameters(n, GenConfig(target_mean_degree=64.0, zeta=0.0), gen)
    graph = sample_graph(theta, gen)
    traits = assign_traits(theta.z, 12, TraitConfig(concentration=4.0), gen)
    Y = build_ard(graph, traits, np.arange(n))
    cfg = FitConfig(restarts=1, max_iter=1200, q_draws=128)
    fit = fit_mle(Y, traits.sizes.astype(float), cfg, gen)
    return fit.model.zeta


@pytest.mark.xfail(
    reason="The unpenalized maximum-likelihood fit does not recover zeta ~ 0 "
    "from distance-irrelevant data at any finite size tried (counts of 2-8 "
    "per cell): the per-respondent latent positions chase Poisson noise and "
    "the profile likelihood in zeta increases all the way to the compact "
    "bound (a Neyman-Scott effect; ascent from a zeta=0 start is monotone "
    "into that mode, so it is the bounded MLE, not an optimizer artifact). "
    "Kept as the documented expectation; see the decisions ledger.",
    strict=False,
)
def test_distance_irrelevant_data_yields_small_zeta():
    zetas = parallel_map(_zeta_zero_rep, range(20), THREADS)
    med = float(np.median(zetas))
    print(f"\nzeta-zero median: {med:.4f} (all: {np.round(zetas, 3)})")
    assert med < 0.1


def _corr_rep(rep):
    gen = rngmod.derive(7300, rep)
    n = 200
    theta = sample_parameters(n, GenConfig(target_mean_degree=0.22 * (n - 1), zeta=2.0),
                              gen)
    graph = sample_graph(theta, gen)
    traits = assign_traits(theta.z, 12, TraitConfig(concentration=4.0), gen)
    Y = build_ard(graph, traits, np.arange(n))
    cfg = FitConfig(restarts=1, max_iter=2000, q_draws=256)
    fit = fit_mle(Y, traits.sizes.astype(float), cfg, gen)
    return recovery_error(fit, theta).distance_correlation


def test_distance_correlation_at_m200():
    corrs = parallel_map(_corr_rep, range(20), THREADS)
    med = float(np.median(corrs))
    print(f"\nm=200 distance correlation median: {med:.3f}")
    assert med >= 0.8
