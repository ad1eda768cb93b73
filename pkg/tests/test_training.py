"""
Test the training objective, its gradients and the training loop.
"""
import numpy as np
import pytest
import torch
from scipy.linalg import expm

from app.core.config import AutoencoderConfig, TrainConfig
from app.core.exceptions import TrainingDivergedError, ValidationError
from app.models.snapshot import Grid1D, SnapshotSet
from app.services import tiling, training
from app.services.latent_dynamics import FeatureLibrary, InteractionDynamics, assemble_global
from app.services.optimizers import SOAP, build_optimizer, build_scheduler
from app.services.training import (
    TrainingSet,
    build_models,
    draw_noise,
    encode_sample,
    encode_training_set,
    loss_ae,
    loss_ld,
    noise_std,
    reg_eigen,
    reg_energy,
    reg_frobenius,
    stack_latents,
    time_derivative,
    total_loss,
    train,
    unstack_latents,
)
from tests.conftest import identity_autoencoder

GENERATOR_MATRIX = np.array([[-0.2, 1.0, 0.0], [-1.0, -0.2, 0.3], [0.0, -0.3, -0.1]])


@pytest.fixture
def single_element_layout():
    return tiling.build_layout(Grid1D(0.0, 1.0, 3), n_elements=1, overlap_points=2)


@pytest.fixture
def manufactured_set(single_element_layout):
    """Exact trajectories of ``dq/dt = A q`` on a three-point element."""
    times = 0.01 * np.arange(41)
    sets = []
    for q0 in ([1.0, 0.0, 0.5], [0.0, -1.0, 2.0]):
        values = np.stack([expm(GENERATOR_MATRIX * t) @ np.array(q0) for t in times], axis=1)
        sets.append(SnapshotSet(grid=single_element_layout.grid, times=times, values=values))
    return TrainingSet.from_snapshots(sets, single_element_layout)


@pytest.fixture
def exact_models():
    dyn = InteractionDynamics(FeatureLibrary("linear", 3))
    dyn.set_blocks(GENERATOR_MATRIX, {})
    return {0: identity_autoencoder(3)}, dyn


@pytest.fixture
def random_set(rng, chain_layout):
    times = 0.1 * np.arange(6)
    values = np.sin(chain_layout.grid.nodes)[:, None] * np.cos(times)[None, :]
    values = values + 0.1 * rng.standard_normal(values.shape)
    snapshots = SnapshotSet(grid=chain_layout.grid, times=times, values=values)
    return TrainingSet.from_snapshots([snapshots, snapshots], chain_layout)


class TestTrainingSet:
    """Subdomain snapshot tensors."""

    def test_shapes(self, random_set):
        sample = random_set.samples[0]
        assert sample.q_by_type[0].shape == (6, 3, 17)
        assert random_set.dt == pytest.approx(0.1)
        assert random_set.local_sizes == {0: 17}

    def test_types_are_grouped(self, chain_grid):
        layout = tiling.build_layout(chain_grid, 3, 5, type_assignment=[0, 1, 0])
        snapshots = SnapshotSet.from_steps(chain_grid, 0.1, np.zeros((41, 4)))
        sample = TrainingSet.from_snapshots([snapshots], layout).samples[0]
        assert sample.q_by_type[0].shape == (4, 2, 17)
        assert sample.index_by_type[1].tolist() == [1]

    def test_time_stride(self, chain_layout):
        snapshots = SnapshotSet.from_steps(chain_layout.grid, 0.1, np.zeros((41, 9)))
        training_set = TrainingSet.from_snapshots([snapshots], chain_layout, time_stride=2)
        assert training_set.samples[0].n_times == 5
        assert training_set.dt == pytest.approx(0.2)

    def test_mixed_time_steps_rejected(self, chain_layout):
        a = SnapshotSet.from_steps(chain_layout.grid, 0.1, np.zeros((41, 4)))
        b = SnapshotSet.from_steps(chain_layout.grid, 0.2, np.zeros((41, 4)))
        with pytest.raises(ValidationError):
            TrainingSet.from_snapshots([a, b], chain_layout)

    def test_too_few_snapshots_rejected(self, chain_layout):
        short = SnapshotSet.from_steps(chain_layout.grid, 0.1, np.zeros((41, 2)))
        with pytest.raises(ValidationError):
            TrainingSet.from_snapshots([short], chain_layout)

    def test_latent_stacking_round_trip(self, rng):
        z = torch.as_tensor(rng.standard_normal((5, 3, 2)))
        stacked = stack_latents(z)
        assert stacked.shape == (6, 5)
        np.testing.assert_array_equal(stacked[2:4, 1], z[1, 1].numpy())
        np.testing.assert_array_equal(unstack_latents(stacked, 3).numpy(), z.numpy())

    def test_encode_training_set(self, random_set):
        encoded = encode_training_set({0: identity_autoencoder(17)}, random_set)
        assert len(encoded) == 2
        assert encoded[0].shape == (3 * 17, 6)
        q = random_set.samples[0].q_by_type[0]
        np.testing.assert_allclose(encoded[0][17:34, 4], q[4, 1].numpy(), atol=1e-14)


class TestTimeDerivative:
    """Second-order finite differences in time."""

    def test_exact_for_quadratics(self):
        t = 0.5 * np.arange(7)
        z = np.stack([t**2, 3.0 * t - 1.0])
        np.testing.assert_allclose(time_derivative(z, 0.5, axis=1), np.stack([2.0 * t, np.full(7, 3.0)]), atol=1e-12)

    def test_torch_matches_numpy(self, rng):
        z = rng.standard_normal((6, 2, 3))
        via_torch = time_derivative(torch.as_tensor(z), 0.1, axis=0).numpy()
        np.testing.assert_allclose(via_torch, time_derivative(z, 0.1, axis=0))

    def test_needs_three_samples(self):
        with pytest.raises(ValidationError):
            time_derivative(np.zeros((2, 2)), 0.1)


class TestLosses:
    """Reconstruction and dynamics losses."""

    def test_manufactured_solution_has_tiny_loss(self, manufactured_set, exact_models):
        autoencoders, dyn = exact_models
        config = TrainConfig(alpha_reg=0.0, beta=0.0)
        parts = total_loss(autoencoders, dyn, manufactured_set, config)
        assert parts.ae.item() < 1e-24
        assert parts.total.item() < 1e-6

    def test_loss_ld_detects_wrong_dynamics(self, manufactured_set, exact_models):
        autoencoders, dyn = exact_models
        zs = [encode_sample(autoencoders, s) for s in manufactured_set.samples]
        exact = loss_ld(zs, dyn, manufactured_set).item()
        dyn.set_blocks(np.zeros((3, 3)), {})
        assert loss_ld(zs, dyn, manufactured_set).item() > 1e3 * exact

    def test_losses_ignore_simulation_order(self, manufactured_set):
        ae_config = AutoencoderConfig(hidden_sizes=[4], latent_dim=2, activation="tanh")
        autoencoders, dyn = build_models({0: 3}, ae_config, "linear", "one_way", seed=0)
        dyn.set_blocks(np.array([[-0.3, 1.0], [-1.0, 0.2]]), {})
        reordered = TrainingSet(samples=list(reversed(manufactured_set.samples)), dt=manufactured_set.dt)
        zs = [encode_sample(autoencoders, s) for s in manufactured_set.samples]

        assert loss_ae(autoencoders, reordered).item() == pytest.approx(loss_ae(autoencoders, manufactured_set).item(), rel=1e-12)
        assert loss_ld(zs[::-1], dyn, reordered).item() == pytest.approx(loss_ld(zs, dyn, manufactured_set).item(), rel=1e-12)

    def test_noise_grows_linearly_in_time(self, manufactured_set, exact_models):
        autoencoders, dyn = exact_models
        z = stack_latents(encode_sample(autoencoders, manufactured_set.samples[0]))
        system = assemble_global(dyn, [], n_elements=1)
        eps = noise_std(z, dyn, system, beta=0.2, dt=manufactured_set.dt)
        assert eps[0] == 0.0
        np.testing.assert_allclose(eps, eps[1] * np.arange(eps.size))
        assert not noise_std(z, dyn, system, beta=0.0, dt=manufactured_set.dt).any()

    def test_noise_enters_reconstruction_only(self, manufactured_set, exact_models):
        autoencoders, dyn = exact_models
        zs = [encode_sample(autoencoders, s) for s in manufactured_set.samples]
        noise = [torch.full_like(z, 0.1) for z in zs]
        assert loss_ae(autoencoders, manufactured_set, noise, zs).item() == pytest.approx(0.01)
        config = TrainConfig(alpha_ae=0.0, alpha_reg=0.0)
        clean = total_loss(autoencoders, dyn, manufactured_set, config, None, zs)
        noisy = total_loss(autoencoders, dyn, manufactured_set, config, noise, zs)
        assert noisy.ld.item() == clean.ld.item()

    def test_draw_noise_is_reproducible(self, manufactured_set, exact_models):
        autoencoders, dyn = exact_models
        zs = [encode_sample(autoencoders, s) for s in manufactured_set.samples]
        a = draw_noise(zs, dyn, manufactured_set, 0.5, torch.Generator().manual_seed(1))
        b = draw_noise(zs, dyn, manufactured_set, 0.5, torch.Generator().manual_seed(1))
        for x, y in zip(a, b):
            assert torch.equal(x, y)
            assert not x[0].any()


class TestRegularizers:
    """Stability penalties."""

    def test_eigen_penalty_value_and_gradient(self):
        matrix = torch.tensor([[1.0, 0.0], [0.0, -2.0]], dtype=torch.float64, requires_grad=True)
        penalty = reg_eigen(matrix)
        assert penalty.item() == pytest.approx(1.0)
        penalty.backward()
        np.testing.assert_allclose(matrix.grad.numpy(), [[2.0, 0.0], [0.0, 0.0]], atol=1e-12)

    def test_eigen_penalty_of_complex_pair(self):
        # eigenvalues 0.5 +/- 2i
        assert reg_eigen(np.array([[0.5, 2.0], [-2.0, 0.5]])) == pytest.approx(0.5)

    def test_stable_operator_has_no_penalty(self):
        assert reg_eigen(-np.eye(3)) == 0.0

    def test_defective_operator_falls_back(self):
        matrix = torch.tensor([[1.0, 1.0], [0.0, 1.0]], dtype=torch.float64, requires_grad=True)
        reg_eigen(matrix).backward()
        assert torch.all(torch.isfinite(matrix.grad))

    def test_eigen_needs_square_operator(self):
        with pytest.raises(ValidationError):
            reg_eigen(np.zeros((2, 3)))

    def test_energy_penalizes_growth_only(self, chain_layout, rng):
        dyn = InteractionDynamics(FeatureLibrary("linear", 2))
        z = torch.as_tensor(rng.standard_normal((4, 3, 2)))
        dyn.set_blocks(np.eye(2), {})
        growing = reg_energy([z], dyn, [chain_layout.edges()]).item()
        assert growing == pytest.approx(float((z**2).sum(dim=(1, 2)).mean()))
        dyn.set_blocks(-np.eye(2), {})
        assert reg_energy([z], dyn, [chain_layout.edges()]).item() == 0.0

    def test_energy_vanishes_for_skew_operator(self, chain_layout, rng):
        dyn = InteractionDynamics(FeatureLibrary("linear", 2))
        coupling = rng.standard_normal((2, 2))
        dyn.set_blocks(np.array([[0.0, 1.5], [-1.5, 0.0]]), {"l": coupling, "r": -coupling.T})
        z = torch.as_tensor(rng.standard_normal((4, 3, 2)))
        assert reg_energy([z], dyn, [chain_layout.edges()]).item() == pytest.approx(0.0, abs=1e-13)

    def test_eigen_gradient_matches_central_differences(self, rng):
        matrix = rng.standard_normal((4, 4)) + 0.5 * np.eye(4)
        assert reg_eigen(matrix) > 0.0
        tensor = torch.tensor(matrix, requires_grad=True)
        reg_eigen(tensor).backward()

        h = 1e-6
        expected = np.zeros_like(matrix)
        for idx in np.ndindex(matrix.shape):
            plus, minus = matrix.copy(), matrix.copy()
            plus[idx] += h
            minus[idx] -= h
            expected[idx] = (reg_eigen(plus) - reg_eigen(minus)) / (2.0 * h)
        np.testing.assert_allclose(tensor.grad.numpy(), expected, rtol=1e-4, atol=1e-8)

    def test_eigen_gradient_fallback_on_ill_conditioning(self, rng, mocker):
        matrix = rng.standard_normal((3, 3)) + 0.5 * np.eye(3)
        assert reg_eigen(matrix) > 0.0
        spy = mocker.spy(training, "_finite_difference_grad")
        analytic = torch.tensor(matrix, requires_grad=True)
        reg_eigen(analytic).backward()
        assert spy.call_count == 0

        fallback = torch.tensor(matrix, requires_grad=True)
        reg_eigen(fallback, condition_limit=1.0).backward()
        assert spy.call_count == 1
        np.testing.assert_allclose(fallback.grad.numpy(), analytic.grad.numpy(), rtol=1e-4, atol=1e-8)

    def test_frobenius(self):
        dyn = InteractionDynamics(FeatureLibrary("linear", 2))
        dyn.set_blocks(np.eye(2), {"l": 2.0 * np.eye(2)})
        assert reg_frobenius(dyn).item() == pytest.approx(10.0)


class TestGradients:
    """Autograd gradients of the full objective against central differences."""

    def test_total_loss_gradient(self, rng, random_set):
        ae_config = AutoencoderConfig(hidden_sizes=[6], latent_dim=2, activation="tanh")
        autoencoders, dyn = build_models({0: 17}, ae_config, "linear", "one_way", seed=0)
        shape = (2, 2)
        dyn.set_blocks(
            0.5 * rng.standard_normal(shape) + np.eye(2),
            {d: 0.5 * rng.standard_normal(shape) for d in dyn.directions},
        )
        config = TrainConfig(alpha_reg=1.0, reg_kind="eigen", beta=0.1)
        zs = [encode_sample(autoencoders, s) for s in random_set.samples]
        noise = draw_noise(zs, dyn, random_set, config.beta, torch.Generator().manual_seed(0))

        def objective():
            return total_loss(autoencoders, dyn, random_set, config, noise)

        parts = objective()
        assert parts.reg.item() > 0.0
        parts.total.backward()

        ae = autoencoders[0]
        checked = [
            (ae.encoder.layers[0].weight, (0, 0)),
            (ae.encoder.layers[1].bias, (1,)),
            (ae.decoder.layers[-1].weight, (3, 2)),
            (dyn.xi_internal, (0, 1)),
            (dyn.xi_dir["l"], (1, 0)),
            (dyn.xi_dir["r"], (0, 0)),
        ]
        eps = 1e-6
        for param, index in checked:
            with torch.no_grad():
                param[index] += eps
                forward = objective().total.item()
                param[index] -= 2 * eps
                backward = objective().total.item()
                param[index] += eps
            expected = (forward - backward) / (2 * eps)
            assert param.grad[index].item() == pytest.approx(expected, rel=1e-5, abs=1e-8)


class TestTrainLoop:
    """End-to-end training runs."""

    def _tiny_models(self, seed=0):
        ae_config = AutoencoderConfig(hidden_sizes=[6], latent_dim=2)
        return build_models({0: 17}, ae_config, "linear", "one_way", seed=seed)

    def test_manufactured_training_stays_exact(self, manufactured_set, exact_models):
        autoencoders, dyn = exact_models
        config = TrainConfig(epochs=1, learning_rate=1e-6, beta=0.0, alpha_reg=0.0)
        result = train(manufactured_set, config, autoencoders, dyn)
        assert result.history.totals[0] < 1e-6

    def test_loss_decreases(self, random_set):
        autoencoders, dyn = self._tiny_models()
        config = TrainConfig(epochs=30, learning_rate=1e-2, beta=0.0, log_every=10)
        result = train(random_set, config, autoencoders, dyn)
        assert len(result.history) == 30
        assert result.history.totals[-1] < result.history.totals[0]
        assert result.reg_kind == "eigen"
        assert result.deviations == ["adam used in place of soap"]

    def test_deterministic_given_seed(self, random_set):
        histories = []
        for _ in range(2):
            autoencoders, dyn = self._tiny_models(seed=4)
            config = TrainConfig(epochs=5, seed=9, beta=0.1, alpha_reg=1.0)
            histories.append(train(random_set, config, autoencoders, dyn).history.totals)
        assert histories[0] == histories[1]

    def test_checkpoint_callback(self, random_set):
        autoencoders, dyn = self._tiny_models()
        seen = []
        config = TrainConfig(epochs=6, checkpoint_every=2)
        train(random_set, config, autoencoders, dyn, on_checkpoint=lambda epoch, result: seen.append(epoch))
        assert seen == [2, 4, 6]

    def test_soap_runs(self, random_set):
        autoencoders, dyn = self._tiny_models()
        config = TrainConfig(epochs=12, optimizer="soap", precondition_frequency=3, beta=0.0)
        result = train(random_set, config, autoencoders, dyn)
        assert result.optimizer_used == "soap"
        assert not result.deviations
        assert np.all(np.isfinite(result.history.totals))

    def test_non_finite_data_diverges(self, random_set):
        autoencoders, dyn = self._tiny_models()
        random_set.samples[0].q_by_type[0][2, 0, 0] = float("nan")
        with pytest.raises(TrainingDivergedError):
            train(random_set, TrainConfig(epochs=2), autoencoders, dyn)


class TestOptimizers:
    """Optimizer and schedule factories."""

    def test_factory(self):
        param = torch.nn.Parameter(torch.zeros(3, 2, dtype=torch.float64))
        assert isinstance(build_optimizer([param], TrainConfig(optimizer="soap")), SOAP)
        assert isinstance(build_optimizer([param], TrainConfig()), torch.optim.Adam)

    def test_cosine_schedule(self):
        param = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        config = TrainConfig(lr_schedule="cosine", epochs=10)
        optimizer = build_optimizer([param], config)
        assert build_scheduler(optimizer, config) is not None
        assert build_scheduler(optimizer, TrainConfig()) is None

    def test_soap_minimizes_quadratic(self):
        target = torch.tensor([[1.0, -2.0], [0.5, 3.0]], dtype=torch.float64)
        param = torch.nn.Parameter(torch.zeros(2, 2, dtype=torch.float64))
        optimizer = SOAP([param], lr=0.02, precondition_frequency=5)
        for _ in range(600):
            optimizer.zero_grad()
            loss = ((param - target) ** 2).sum()
            loss.backward()
            optimizer.step()
        assert ((param - target) ** 2).sum().item() < 5e-2
