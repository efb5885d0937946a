"""Coupling flow: invertibility, log-dets, densities, and the residual loss."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshflow import flow as F
from meshflow import tensor as T
from meshflow.errors import DomainError, ShapeError
from meshflow.tensor import Tensor, grad_check

LOG_2PI = math.log(2.0 * math.pi)


def random_flow(dim, layers, rng, hidden=8, init_std=0.3, scale_bound=4.0):
    return F.build_flow(dim, layers, hidden, rng, scale_bound=scale_bound,
                        init_std=init_std)


def constant_net(in_dim, out_dim, bias_value):
    """Coupling net ignoring its input: two zero hidden layers, fixed bias."""
    zeros = lambda *s: Tensor(np.zeros(s))
    return F.CouplingNet(w1=zeros(in_dim, 4), b1=zeros(4), w2=zeros(4, 4),
                         b2=zeros(4), w3=zeros(4, out_dim),
                         b3=Tensor(np.full(out_dim, bias_value)))


class TestCouplingForward:
    def test_zero_initialized_nets_are_identity(self):
        rng = np.random.default_rng(0)
        layer = F.build_flow(4, 1, 8, rng, init_std=0.0).layers[0]
        x = rng.standard_normal(4)
        y, logdet = F.coupling_forward(Tensor(x), layer)
        assert np.array_equal(y.data, x)
        assert logdet.item() == 0.0

    def test_constant_log2_scale_doubles_coordinate(self):
        # one conditioning coord, one transformed; tanh bound solved so the
        # emitted scale is exactly ln 2
        raw = math.atanh(math.log(2.0) / 4.0)
        layer = F.CouplingLayer(mask=np.array([1.0, 0.0]),
                                scale_net=constant_net(1, 1, raw),
                                translate_net=constant_net(1, 1, 0.0))
        x = np.array([0.7, 3.0])
        y, logdet = F.coupling_forward(Tensor(x), layer)
        assert y.data[0] == 0.7
        assert abs(y.data[1] - 6.0) < 1e-12
        assert abs(logdet.item() - math.log(2.0)) < 1e-12

    def test_logdet_against_fd_jacobian(self):
        eps = 1e-5
        for dim in (2, 4):
            rng = np.random.default_rng(10 + dim)
            for _ in range(5):
                layer = random_flow(dim, 1, rng).layers[0]
                x = rng.standard_normal(dim)
                _, logdet = F.coupling_forward(Tensor(x), layer)
                jac = np.empty((dim, dim))
                for j in range(dim):
                    bump = np.zeros(dim)
                    bump[j] = eps
                    hi, _ = F.coupling_forward(Tensor(x + bump), layer)
                    lo, _ = F.coupling_forward(Tensor(x - bump), layer)
                    jac[:, j] = (hi.data - lo.data) / (2 * eps)
                _, fd = np.linalg.slogdet(jac)
                assert abs(logdet.item() - fd) / max(1.0, abs(fd)) < 1e-5


class TestCouplingInverse:
    def test_identity_layer(self):
        rng = np.random.default_rng(1)
        layer = F.build_flow(4, 1, 8, rng, init_std=0.0).layers[0]
        y = rng.standard_normal(4)
        assert np.array_equal(F.coupling_inverse(Tensor(y), layer).data, y)

    def test_inverse_of_forward_roundtrip(self):
        rng = np.random.default_rng(2)
        flow = random_flow(16, 6, rng)
        for _ in range(100):
            x = rng.standard_normal(16)
            y, _ = F.flow_forward(Tensor(x), flow)
            back = F.flow_invert(y, flow)
            assert np.abs(back.data - x).max() < 1e-9

    def test_forward_of_inverse_roundtrip(self):
        rng = np.random.default_rng(3)
        flow = random_flow(16, 4, rng)
        for _ in range(50):
            y = rng.standard_normal(16)
            x = F.flow_invert(Tensor(y), flow)
            again, _ = F.flow_forward(x, flow)
            assert np.abs(again.data - y).max() < 1e-9

    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=607))
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_property(self, dim, seed):
        rng = np.random.default_rng(seed)
        flow = random_flow(dim, 2, rng)
        x = rng.standard_normal(dim)
        y, _ = F.flow_forward(Tensor(x), flow)
        assert np.abs(F.flow_invert(y, flow).data - x).max() < 1e-9


class TestLogDensity:
    def test_identity_flow_1d_at_origin(self):
        flow = F.FlowModel(dim=1, layers=[])
        got = F.flow_log_density(Tensor([0.0]), flow).item()
        assert abs(got - (-0.5 * LOG_2PI)) < 1e-12  # -0.9189385...

    def test_identity_flow_2d_at_origin(self):
        flow = F.FlowModel(dim=2, layers=[])
        got = F.flow_log_density(Tensor([0.0, 0.0]), flow).item()
        assert abs(got - (-LOG_2PI)) < 1e-12  # -1.8378770...

    def test_two_layer_flow_integrates_to_one(self):
        rng = np.random.default_rng(4)
        flow = random_flow(2, 2, rng, hidden=16, init_std=0.25, scale_bound=1.0)
        grid = 400
        extent = 8.0
        cell = 2.0 * extent / grid
        centers = -extent + (np.arange(grid) + 0.5) * cell
        gx, gy = np.meshgrid(centers, centers)
        points = np.stack([gx.ravel(), gy.ravel()], axis=1)
        log_p = F.flow_log_density(Tensor(points), flow).data
        mass = float(np.exp(log_p).sum() * cell * cell)
        assert abs(mass - 1.0) < 0.01

    def test_finite_for_finite_points(self):
        rng = np.random.default_rng(5)
        flow = random_flow(6, 4, rng)
        pts = rng.standard_normal((20, 6)) * 3.0
        assert np.isfinite(F.flow_log_density(Tensor(pts), flow).data).all()


def make_standardization(mu, sigma):
    return F.ResidualStandardization(
        mu=Tensor(mu, requires_grad=True), sigma=Tensor(sigma, requires_grad=True))


class TestRleLoss:
    def test_identity_anchor_dim1(self):
        # both densities at their mode, unit sigma, one residual dimension:
        # loss = 2 * 0.5 * ln(2 pi) = 1.8378771
        flow = F.FlowModel(dim=1, layers=[])
        std = make_standardization(np.array([[0.4]]), np.ones((1, 1)))
        got = F.rle_loss(std, np.array([[0.4]]), flow).item()
        assert abs(got - 1.8378770664093453) < 1e-6

    def test_identity_anchor_full_vertex_shape(self):
        flow = F.FlowModel(dim=3, layers=[])
        mu_g = np.array([[0.3, -0.1, 0.7]])
        std = make_standardization(mu_g.copy(), np.ones((1, 3)))
        got = F.rle_loss(std, mu_g, flow).item()
        assert abs(got - 3 * LOG_2PI) < 1e-6

    def test_sigma_e_adds_one_per_dimension(self):
        flow = F.FlowModel(dim=3, layers=[])
        mu_g = np.array([[0.3, -0.1, 0.7]])
        base = F.rle_loss(make_standardization(mu_g.copy(), np.ones((1, 3))),
                          mu_g, flow).item()
        scaled = F.rle_loss(make_standardization(mu_g.copy(), np.full((1, 3), math.e)),
                            mu_g, flow).item()
        assert abs(scaled - (base + 3.0)) < 1e-9

    def test_direct_formula_oracle(self):
        rng = np.random.default_rng(6)
        flow = random_flow(6, 2, rng)
        mu = rng.normal(size=(2, 3))
        sigma = rng.uniform(0.5, 2.0, size=(2, 3))
        mu_g = rng.normal(size=(2, 3))
        got = F.rle_loss(make_standardization(mu, sigma), mu_g, flow).item()
        r = ((mu_g - mu) / sigma).reshape(1, -1)
        neg_log_q = 0.5 * (6 * LOG_2PI + (r ** 2).sum())
        neg_log_g = -F.flow_log_density(Tensor(r[0]), flow).item()
        want = neg_log_q + neg_log_g + np.log(sigma).sum()
        assert abs(got - want) < 1e-10

    def test_gradients_match_central_differences(self):
        rng = np.random.default_rng(7)
        flow = random_flow(6, 2, rng, hidden=6)
        mu = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        sigma = Tensor(rng.uniform(0.8, 1.5, size=(2, 3)), requires_grad=True)
        mu_g = rng.normal(size=(2, 3))
        params = [mu, sigma] + flow.parameters()

        def loss():
            std = F.ResidualStandardization(mu=mu, sigma=sigma)
            return F.rle_loss(std, mu_g, flow)

        assert grad_check(loss, params, eps=1e-5) < 1e-4

    def test_loss_decreases_as_mu_approaches_target(self):
        flow = F.FlowModel(dim=3, layers=[])
        mu_g = np.array([[0.5, 0.5, 0.5]])
        losses = []
        for alpha in (0.0, 0.5, 0.9, 1.0):
            mu = alpha * mu_g
            losses.append(F.rle_loss(make_standardization(mu, np.ones((1, 3))),
                                     mu_g, flow).item())
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_non_positive_sigma_rejected(self):
        with pytest.raises(DomainError):
            make_standardization(np.zeros((1, 3)), np.zeros((1, 3)))


class TestFlowSample:
    def test_monte_carlo_moments(self):
        flow = F.FlowModel(dim=4, layers=[])
        std = make_standardization(np.zeros((2, 2)), np.ones((2, 2)))
        samples = F.flow_sample(flow, std, count=100_000, seed=42)
        assert samples.shape == (100_000, 4)
        assert np.abs(samples.mean(axis=0)).max() < 0.02
        assert np.abs(samples.var(axis=0) - 1.0).max() < 0.03

    def test_tiny_sigma_collapses_to_mu(self):
        rng = np.random.default_rng(8)
        flow = F.FlowModel(dim=4, layers=[])
        mu = rng.normal(size=(2, 2))
        std = make_standardization(mu, np.full((2, 2), 1e-6))
        samples = F.flow_sample(flow, std, count=100, seed=0)
        assert np.abs(samples - mu.reshape(1, -1)).max() < 1e-5

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(9)
        flow = random_flow(4, 2, rng)
        std = make_standardization(rng.normal(size=(2, 2)),
                                   rng.uniform(0.5, 2.0, (2, 2)))
        a = F.flow_sample(flow, std, count=64, seed=7)
        b = F.flow_sample(flow, std, count=64, seed=7)
        assert np.array_equal(a, b)

    def test_count_validated(self):
        flow = F.FlowModel(dim=2, layers=[])
        std = make_standardization(np.zeros((1, 2)), np.ones((1, 2)))
        with pytest.raises(DomainError):
            F.flow_sample(flow, std, count=0, seed=0)


class TestStructure:
    def test_masks_must_alternate(self):
        rng = np.random.default_rng(10)
        layers = F.build_flow(4, 2, 8, rng).layers
        with pytest.raises(ShapeError):
            F.FlowModel(dim=4, layers=[layers[0], layers[0]])

    def test_mask_needs_both_values(self):
        with pytest.raises(ShapeError):
            F.CouplingLayer(mask=np.ones(4), scale_net=constant_net(4, 0, 0.0),
                            translate_net=constant_net(4, 0, 0.0))

    def test_coupling_needs_two_dims(self):
        rng = np.random.default_rng(11)
        with pytest.raises(ShapeError):
            F.build_flow(1, 2, 8, rng)


@given(st.floats(min_value=1e-6, max_value=1e6),
       st.floats(min_value=1e-6, max_value=1e6),
       st.floats(min_value=1e-6, max_value=1e6))
@settings(max_examples=300, deadline=None)
def test_three_term_density_split_is_exact(p, q, c):
    log_q, log_ratio, log_c = F.decompose_log_density(p, q, c)
    assert abs((log_q + log_ratio + log_c) - math.log(p)) < 1e-12
