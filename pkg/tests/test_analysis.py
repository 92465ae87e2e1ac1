import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tailaudit import analysis, synthgen
from tailaudit.exceptions import EmptySubgroupError, ValidationError
from tailaudit.losses import CrossEntropy, Focal
from tailaudit.models import ModelParams
from tailaudit.synthgen import Dataset, LinearTeacher, MixtureSpec, GaussianComponent, TeacherSpec
from tailaudit.trainers import TrainConfig

from .oracles.grad_decomposition import decomposition as oracle_decomposition
from .oracles.mutual_information import threshold_mi

CE = CrossEntropy()
ROOT = Path(__file__).resolve().parents[1]


def _equal_norm_dataset(n_common, n_rare):
    # at theta = 0 every record's CE gradient has norm sqrt(2) / 2
    X = np.r_[np.ones(n_common), -np.ones(n_rare)][:, None]
    y = np.r_[np.zeros(n_common), np.ones(n_rare)]
    g = np.r_[np.zeros(n_common), np.ones(n_rare)]
    return Dataset(X, y, g)


class TestDecomposition:
    @pytest.mark.parametrize("n_common, n_rare", [(95, 5), (990, 10), (7, 3)])
    def test_equal_norms_give_prevalence_ratio(self, n_common, n_rare):
        dec = analysis.decompose_gradients(_equal_norm_dataset(n_common, n_rare), ModelParams.zeros("linear", 1), CE)
        pi = n_rare / (n_common + n_rare)
        assert dec.norm_common == pytest.approx(dec.norm_rare, rel=1e-15)
        assert abs(dec.contribution_ratio - pi / (1 - pi)) <= 1e-12
        assert dec.identity_holds and dec.literal_inequality_holds is False

    def test_balanced_groups(self):
        dec = analysis.decompose_gradients(_equal_norm_dataset(50, 50), ModelParams.zeros("linear", 1), CE)
        assert dec.ratio_bound == 1.0
        assert dec.contribution_ratio == pytest.approx(1.0, abs=1e-12)

    def test_matches_independent_recomputation(self, tmp_path):
        ds = synthgen.sample_mixture(synthgen.reference_mixture(), synthgen.reference_teacher(), 20000, 2024)
        path = tmp_path / "ref.csv"
        ds.to_csv(path)
        ours = analysis.decompose_gradients(synthgen.read_dataset_csv(path), ModelParams.zeros("linear", 2), CE)
        ref = oracle_decomposition(path, [0.0, 0.0], 0.0)
        for key, value in ref.items():
            assert abs(getattr(ours, key) - value) <= 1e-10, key

    def test_oracle_script_entry_point(self, tmp_path):
        ds = synthgen.sample_mixture(synthgen.reference_mixture(), synthgen.reference_teacher(), 500, 1)
        ds.to_csv(tmp_path / "d.csv")
        out = subprocess.run(
            [sys.executable, "-m", "tests.oracles.grad_decomposition", str(tmp_path / "d.csv"), "0.1", "-0.2", "0.3"],
            cwd=ROOT, capture_output=True, text=True, check=True,
        ).stdout
        got = dict(line.split() for line in out.splitlines())
        dec = analysis.decompose_gradients(ds, ModelParams.linear([0.1, -0.2], 0.3), CE)
        assert abs(float(got["contribution_ratio"]) - dec.contribution_ratio) <= 1e-10

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_shuffle_invariance_and_triangle(self, seed):
        rng = np.random.default_rng(seed)
        ds = synthgen.sample_mixture(synthgen.reference_mixture(0.2), synthgen.reference_teacher(), 300, seed)
        params = ModelParams.linear(rng.normal(size=2), rng.normal())
        a = analysis.decompose_gradients(ds, params, Focal(0.5, 1.0))
        b = analysis.decompose_gradients(ds.subset(rng.permutation(len(ds))), params, Focal(0.5, 1.0))
        assert a.contribution_ratio == pytest.approx(b.contribution_ratio, rel=1e-12)
        assert a.triangle_holds and a.identity_holds
        assert a.norm_total <= a.contribution_common + a.contribution_rare + 1e-15

    def test_needs_both_groups(self):
        ds = Dataset(np.ones((4, 1)), [0, 1, 0, 1], np.zeros(4))
        with pytest.raises(EmptySubgroupError):
            analysis.decompose_gradients(ds, ModelParams.zeros("linear", 1), CE)


class TestConvergenceGap:
    def test_zero_weight_gives_exact_zero(self):
        gap = analysis.convergence_gap(
            synthgen.reference_mixture(0.0), synthgen.reference_teacher(), TrainConfig(epochs=2), CE, 2000, 5
        )
        assert gap.epsilon == 0.0

    def test_positive_weight_moves_solution(self):
        gap = analysis.convergence_gap(
            synthgen.reference_mixture(0.3), synthgen.reference_teacher(), TrainConfig(epochs=2), CE, 2000, 5
        )
        assert gap.epsilon > 0 and gap.pi == 0.3

    def test_architecture_mismatch(self):
        with pytest.raises(ValidationError):
            analysis.convergence_gap(
                synthgen.reference_mixture(0.1), synthgen.reference_teacher(),
                TrainConfig(architecture="mlp1"), CE, 1000, 0,
            )


def _one_dim(x, y, group=0):
    return Dataset(x[:, None], y, np.full(x.size, group))


class TestMutualInformation:
    def test_independence(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=100_000)
        est = analysis.estimate_group_mi(_one_dim(x, rng.integers(0, 2, x.size)), "common")
        assert est.mi_nats < 0.01

    @pytest.mark.parametrize("threshold", [0.0, 0.5, 1.0])
    def test_threshold_matches_quadrature(self, threshold):
        x = np.random.default_rng(1).normal(size=100_000)
        est = analysis.estimate_group_mi(_one_dim(x, (x > threshold).astype(int)), "common")
        truth = threshold_mi(threshold)
        assert abs(est.mi_nats - truth) <= 0.1 * truth
        assert est.stderr > 0

    def test_rare_group_more_informative_in_constructed_mixture(self):
        spec = MixtureSpec(0.3, GaussianComponent.isotropic([0.0, 0.0]), GaussianComponent.isotropic([3.0, 1.5], 0.25))
        teacher = TeacherSpec(LinearTeacher([1.0, 0.0], -2.5), LinearTeacher([1.0, 0.0], -3.0), 0.05)
        ds = synthgen.sample_mixture(spec, teacher, 40_000, 3)
        common = analysis.estimate_group_mi(ds, "common", teacher=teacher)
        rare = analysis.estimate_group_mi(ds, "rare", teacher=teacher)
        assert rare.mi_nats - common.mi_nats > 3 * math.hypot(rare.stderr, common.stderr)

    def test_too_few_samples(self):
        x = np.random.default_rng(0).normal(size=500)
        with pytest.raises(EmptySubgroupError):
            analysis.estimate_group_mi(_one_dim(x, (x > 0).astype(int)), "common")

    def test_multivariate_needs_teacher(self, small_reference):
        with pytest.raises(ValidationError):
            analysis.estimate_group_mi(small_reference, "common", min_samples=10)
