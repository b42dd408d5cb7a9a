import cmath
import math

import numpy as np
import pytest

from mzical.mesh import (
    AnalyticalParams,
    MeshTopology,
    VirtualChipParams,
    default_crossbar_topology,
    load_params,
    mzi_transmission,
    phases_from_voltages,
    predict_weights,
    predict_weights_batch,
    save_params,
    split_tree_topology,
    topology_hash,
    virtual_chip_measure,
    virtual_chip_measure_batch,
)

from conftest import make_small_params


def scalar_weight_oracle(params: AnalyticalParams, v) -> np.ndarray:
    """Brute-force scalar evaluation through the linear-power route.

    Deliberately shares no code with the implementation: complex modulus
    per MZI, explicit product, single log at the end.
    """
    er_lin = 10.0 ** (params.er_db / 10.0)
    r = (math.sqrt(er_lin) - 1.0) / (math.sqrt(er_lin) + 1.0)
    out = np.zeros(params.topology.shape)
    for (i, j), entries in params.topology.path_sets.items():
        w_lin = 10.0 ** (params.alpha_db[i, j] / 10.0)
        for m, sign in entries:
            phi = params.phi0[m]
            for n in range(params.topology.n_mzi):
                phi += params.phi2[m, n] * v[n] ** 2
            w_lin *= abs(r + sign * cmath.exp(1j * phi)) ** 2 / 4.0
        out[i, j] = 10.0 * math.log10(w_lin)
    return out


class TestMziTransmission:
    def test_ideal_er_open_and_closed(self):
        assert mzi_transmission(0.0, math.inf, 1) == pytest.approx(1.0, abs=1e-15)
        assert mzi_transmission(math.pi, math.inf, 1) == pytest.approx(0.0, abs=1e-15)

    def test_finite_er_minimum_closed_form(self):
        # ER 20 dB -> r = 9/11, minimum (1-r)^2/4
        t = mzi_transmission(math.pi, 20.0, 1)
        assert t == pytest.approx(0.25 * (1 - 9 / 11) ** 2, abs=1e-15)
        assert 10 * math.log10(t) == pytest.approx(-20.83, abs=0.01)

    def test_finite_er_minimum_matches_grid_search(self):
        # independent oracle: numerically minimize over a dense phase grid
        grid = np.linspace(0.0, 2.0 * np.pi, 20001)
        t_grid = mzi_transmission(grid, 20.0, 1)
        assert abs(t_grid.min() - 0.25 * (1 - 9 / 11) ** 2) < 1e-8

    def test_ideal_er_equals_cos_squared(self):
        phi = np.linspace(-7.0, 7.0, 1000)
        assert np.max(np.abs(mzi_transmission(phi, math.inf, 1) - np.cos(phi / 2.0) ** 2)) < 1e-12

    def test_periodicity(self):
        phi = np.linspace(0.0, 2.0 * np.pi, 101)
        for er in (12.0, 25.0, math.inf):
            assert np.max(np.abs(mzi_transmission(phi, er, 1) - mzi_transmission(phi + 2 * np.pi, er, 1))) < 1e-12

    def test_sign_flip_identity(self):
        phi = np.linspace(0.0, 2.0 * np.pi, 101)
        assert np.max(np.abs(mzi_transmission(phi, math.inf, 1) - mzi_transmission(phi + np.pi, math.inf, -1))) < 1e-12

    def test_range_bounds(self):
        rng = np.random.default_rng(3)
        phi = rng.uniform(-10, 10, 500)
        er = 17.0
        er_lin = 10 ** (er / 10)
        r = (math.sqrt(er_lin) - 1) / (math.sqrt(er_lin) + 1)
        t = mzi_transmission(phi, er, -1)
        assert np.all(t >= 0.25 * (1 - r) ** 2 - 1e-15)
        assert np.all(t <= 0.25 * (1 + r) ** 2 + 1e-15)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            mzi_transmission(0.0, -1.0, 1)
        with pytest.raises(ValueError):
            mzi_transmission(0.0, 0.0, 1)
        with pytest.raises(ValueError):
            mzi_transmission(math.nan, 20.0, 1)
        with pytest.raises(ValueError):
            mzi_transmission(0.0, 20.0, 2)


class TestPhases:
    def test_zero_voltage_gives_offsets(self, small_params):
        v = np.zeros(small_params.topology.n_mzi)
        assert np.array_equal(phases_from_voltages(small_params, v), small_params.phi0)

    def test_zero_phi2_gives_offsets(self):
        topo = default_crossbar_topology(2)
        params = AnalyticalParams(
            topology=topo,
            alpha_db=np.zeros((2, 2)),
            er_db=25.0,
            phi0=np.array([0.1, 0.2, 0.3, 0.4]),
            phi2=np.zeros((4, 4)),
        )
        v = np.array([1.0, 2.0, 0.5, 1.5])
        assert np.array_equal(phases_from_voltages(params, v), params.phi0)

    def test_half_period_at_two_volts(self):
        # phi2 = (pi/4) I: driving one heater at 2 V adds pi to its phase
        topo = default_crossbar_topology(2)
        params = AnalyticalParams(
            topology=topo,
            alpha_db=np.zeros((2, 2)),
            er_db=25.0,
            phi0=np.zeros(4),
            phi2=np.diag(np.full(4, np.pi / 4.0)),
        )
        v = np.array([2.0, 0.0, 0.0, 0.0])
        phi = phases_from_voltages(params, v)
        assert phi[0] == pytest.approx(np.pi, abs=1e-12)
        assert np.all(phi[1:] == 0.0)

    def test_length_mismatch(self, small_params):
        with pytest.raises(ValueError):
            phases_from_voltages(small_params, np.zeros(small_params.topology.n_mzi + 1))


class TestPredictWeights:
    def test_unit_transmission_zero_loss(self):
        topo = default_crossbar_topology(1)
        params = AnalyticalParams(
            topology=topo, alpha_db=np.zeros((1, 1)), er_db=200.0,
            phi0=np.zeros(1), phi2=np.zeros((1, 1)),
        )
        w = predict_weights(params, np.zeros(1))
        assert w[0, 0] == pytest.approx(0.0, abs=1e-8)

    def test_loss_passes_through_at_peak(self):
        topo = default_crossbar_topology(2)
        params = AnalyticalParams(
            topology=topo, alpha_db=np.full((2, 2), -3.0), er_db=200.0,
            phi0=np.zeros(4), phi2=np.zeros((4, 4)),
        )
        w = predict_weights(params, np.ones(4))
        assert np.allclose(w, -3.0, atol=1e-8)

    def test_matches_scalar_oracle_on_fixture(self, crossbar_chip):
        v = np.ones(crossbar_chip.topology.n_mzi)
        expected = scalar_weight_oracle(crossbar_chip.base, v)
        assert np.allclose(predict_weights(crossbar_chip.base, v), expected, atol=1e-9)

    def test_matches_scalar_oracle_random(self):
        rng = np.random.default_rng(11)
        for seed in range(5):
            params = make_small_params(seed)
            v = rng.uniform(0, 2, params.topology.n_mzi)
            assert np.allclose(predict_weights(params, v), scalar_weight_oracle(params, v), atol=1e-9)

    def test_multi_mzi_path_oracle(self, splittree_chip):
        # paths of length two exercise the transmission product
        v = np.linspace(0.2, 1.8, splittree_chip.topology.n_mzi)
        expected = scalar_weight_oracle(splittree_chip.base, v)
        assert np.allclose(predict_weights(splittree_chip.base, v), expected, atol=1e-9)

    def test_batch_matches_single(self, small_params):
        # not bitwise: BLAS may pick different kernels per batch shape
        rng = np.random.default_rng(7)
        volts = rng.uniform(0, 2, (6, small_params.topology.n_mzi))
        batch = predict_weights_batch(small_params, volts)
        for s in range(6):
            assert np.allclose(batch[s], predict_weights(small_params, volts[s]), atol=1e-12)

    def test_linear_weights_in_unit_interval(self):
        rng = np.random.default_rng(23)
        for seed in range(5):
            params = make_small_params(seed)
            volts = rng.uniform(0, 2, (20, params.topology.n_mzi))
            w_db = predict_weights_batch(params, volts)
            assert np.all(np.isfinite(w_db))
            assert np.all(w_db <= 1e-12)  # linear weight <= 1 given alpha <= 0

    def test_monotone_product(self):
        # appending a lossy MZI to a path strictly decreases the weight
        base_paths = {(0, 0): ((0, 1),)}
        longer_paths = {(0, 0): ((0, 1), (1, 1))}
        t1 = MeshTopology(n_inputs=1, n_outputs=1, n_mzi=2, path_sets=base_paths)
        t2 = MeshTopology(n_inputs=1, n_outputs=1, n_mzi=2, path_sets=longer_paths)
        kwargs = dict(alpha_db=np.zeros((1, 1)), er_db=25.0, phi0=np.array([0.3, 0.9]),
                      phi2=np.diag([0.7, 0.8]))
        p1 = AnalyticalParams(topology=t1, **kwargs)
        p2 = AnalyticalParams(topology=t2, **kwargs)
        v = np.array([1.0, 1.0])
        assert predict_weights(p2, v)[0, 0] < predict_weights(p1, v)[0, 0]


class TestVirtualChip:
    def test_reduction_is_bit_exact(self, am_form_chip):
        rng = np.random.default_rng(5)
        volts = rng.uniform(0, 2, (25, am_form_chip.topology.n_mzi))
        measured = virtual_chip_measure_batch(am_form_chip, volts, 0)
        predicted = predict_weights_batch(am_form_chip.base, volts)
        assert np.array_equal(measured, predicted)

    def test_noise_determinism(self, crossbar_chip):
        v = np.full(crossbar_chip.topology.n_mzi, 0.7)
        a = virtual_chip_measure(crossbar_chip, v, rng_seed=42)
        b = virtual_chip_measure(crossbar_chip, v, rng_seed=42)
        c = virtual_chip_measure(crossbar_chip, v, rng_seed=43)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_quartic_vanishes_at_zero_voltage(self, crossbar_chip):
        quiet = VirtualChipParams(
            base=crossbar_chip.base,
            er_db_per_mzi=crossbar_chip.er_db_per_mzi,
            phi4=crossbar_chip.phi4,
            noise_sigma_db=0.0,
        )
        uniform_er = VirtualChipParams(
            base=crossbar_chip.base,
            er_db_per_mzi=crossbar_chip.er_db_per_mzi,
            phi4=np.zeros_like(crossbar_chip.phi4),
            noise_sigma_db=0.0,
        )
        v = np.zeros(crossbar_chip.topology.n_mzi)
        assert np.array_equal(virtual_chip_measure(quiet, v, 0), virtual_chip_measure(uniform_er, v, 0))

    def test_validation(self, crossbar_chip):
        n = crossbar_chip.topology.n_mzi
        with pytest.raises(ValueError):
            VirtualChipParams(base=crossbar_chip.base, er_db_per_mzi=np.zeros(n),
                              phi4=np.zeros(n), noise_sigma_db=0.0)
        with pytest.raises(ValueError):
            VirtualChipParams(base=crossbar_chip.base, er_db_per_mzi=np.full(n, 25.0),
                              phi4=np.zeros(n), noise_sigma_db=-0.1)


class TestTopology:
    @pytest.mark.parametrize("n,expected_mzi", [(1, 1), (2, 4), (3, 9)])
    def test_crossbar_sizes(self, n, expected_mzi):
        topo = default_crossbar_topology(n)
        assert topo.n_mzi == expected_mzi
        assert len(topo.path_sets) == n * n

    def test_crossbar_index_arithmetic(self):
        topo = default_crossbar_topology(3)
        assert topo.path_sets[(2, 1)] == ((7, 1),)
        assert topo.path_sets[(0, 0)] == ((0, 1),)

    def test_crossbar_rejects_zero(self):
        with pytest.raises(ValueError):
            default_crossbar_topology(0)

    def test_split_tree_paths(self):
        topo = split_tree_topology(3)
        assert topo.n_mzi == 12
        signs = set()
        for entries in topo.path_sets.values():
            assert len(entries) == 2
            signs.add(entries[0][1])
        assert signs == {1, -1}

    def test_validation_errors(self):
        with pytest.raises(ValueError):  # incomplete coverage
            MeshTopology(n_inputs=2, n_outputs=1, n_mzi=2, path_sets={(0, 0): ((0, 1),)})
        with pytest.raises(ValueError):  # mzi index out of range
            MeshTopology(n_inputs=1, n_outputs=1, n_mzi=1, path_sets={(0, 0): ((1, 1),)})
        with pytest.raises(ValueError):  # bad sign
            MeshTopology(n_inputs=1, n_outputs=1, n_mzi=1, path_sets={(0, 0): ((0, 2),)})


class TestParamsValidation:
    def test_positive_alpha_rejected(self):
        topo = default_crossbar_topology(1)
        with pytest.raises(ValueError):
            AnalyticalParams(topology=topo, alpha_db=np.array([[0.1]]), er_db=25.0,
                             phi0=np.zeros(1), phi2=np.zeros((1, 1)))

    def test_nonpositive_er_rejected(self):
        topo = default_crossbar_topology(1)
        for er in (0.0, -3.0, math.nan, math.inf):
            with pytest.raises(ValueError):
                AnalyticalParams(topology=topo, alpha_db=np.zeros((1, 1)), er_db=er,
                                 phi0=np.zeros(1), phi2=np.zeros((1, 1)))

    def test_shape_mismatch_rejected(self):
        topo = default_crossbar_topology(2)
        with pytest.raises(ValueError):
            AnalyticalParams(topology=topo, alpha_db=np.zeros((2, 2)), er_db=25.0,
                             phi0=np.zeros(3), phi2=np.zeros((4, 4)))


class TestFixtureIO:
    def test_round_trip_exact(self, tmp_path, crossbar_chip):
        path = tmp_path / "chip.json"
        save_params(crossbar_chip, path)
        loaded = load_params(path)
        assert isinstance(loaded, VirtualChipParams)
        assert np.array_equal(loaded.base.alpha_db, crossbar_chip.base.alpha_db)
        assert np.array_equal(loaded.base.phi0, crossbar_chip.base.phi0)
        assert np.array_equal(loaded.base.phi2, crossbar_chip.base.phi2)
        assert np.array_equal(loaded.phi4, crossbar_chip.phi4)
        assert np.array_equal(loaded.er_db_per_mzi, crossbar_chip.er_db_per_mzi)
        assert loaded.noise_sigma_db == crossbar_chip.noise_sigma_db
        assert loaded.topology.path_sets == crossbar_chip.topology.path_sets

    def test_plain_params_round_trip(self, tmp_path, small_params):
        path = tmp_path / "model.json"
        save_params(small_params, path)
        loaded = load_params(path)
        assert isinstance(loaded, AnalyticalParams)
        assert np.array_equal(loaded.phi2, small_params.phi2)
        assert loaded.er_db == small_params.er_db

    def test_topology_hash_stable(self, crossbar_chip):
        h1 = topology_hash(crossbar_chip.topology)
        h2 = topology_hash(default_crossbar_topology(3))
        assert h1 == h2
        assert h1 != topology_hash(split_tree_topology(3))
