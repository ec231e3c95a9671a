from dataclasses import replace

import numpy as np
import torch
from django.test import SimpleTestCase

from apps.core.domain import NormalizationSpec
from apps.core.exceptions import NonFiniteStateError, PruningError
from apps.snn.quantization import WEIGHT_SPEC, quantize
from apps.snn.runtime import (
    LifParams,
    LifState,
    NetworkParams,
    estimate_sequence,
    li_step,
    lif_step,
    network_forward,
    prune,
    run_network,
    silenced_by,
)

from .factories import random_sequence


def reference_forward(params, inputs):
    """Step-by-step re-simulation with the single-neuron kernels."""
    enc = LifState.rest(params.n_enc)
    hid = LifState.rest(params.n_hid)
    out = LifState.rest(2)
    s_hid = np.zeros(params.n_hid)
    estimates = []
    for x in inputs:
        enc, s_enc = lif_step(enc, params.enc_lif, x @ params.enc_weights, params.current_first)
        current = s_enc @ params.hid_weights_ff + s_hid @ params.hid_weights_rec
        hid, s_hid = lif_step(hid, params.hid_lif, current, params.current_first)
        out = li_step(out, params.out_li, s_hid @ params.out_weights, params.current_first)
        estimates.append(out.v)
    return np.array(estimates)


class LifStepTest(SimpleTestCase):
    def test_scalar_recursion(self):
        lif = LifParams.uniform(1, tau_mem=0.9, tau_syn=0.8, threshold=1.0)
        state = LifState.rest(1)
        v = i = 0.0
        for _ in range(20):
            state, spikes = lif_step(state, lif, [0.3])
            i = 0.8 * i + 0.3
            v = 0.9 * v + i
            fired = v - 1.0 > 0
            if fired:
                v = 0.0
            self.assertEqual(bool(spikes[0]), fired)
            self.assertAlmostEqual(state.v[0], v, places=12)
            self.assertAlmostEqual(state.i[0], i, places=12)

    def test_previous_current_ordering(self):
        lif = LifParams.uniform(1, tau_mem=0.5, tau_syn=0.5, threshold=10.0)
        state, _ = lif_step(LifState.rest(1), lif, [1.0], current_first=False)
        self.assertEqual(state.v[0], 0.0)
        self.assertEqual(state.i[0], 1.0)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            lif_step(LifState.rest(2), LifParams.uniform(3, 0.9, 0.9), np.zeros(3))

    def test_invalid_decay(self):
        with self.assertRaises(ValueError):
            LifParams.uniform(2, tau_mem=1.2, tau_syn=0.5)

    def test_leaky_integrator_never_resets(self):
        state = LifState.rest(2)
        for _ in range(50):
            state = li_step(state, (0.95, 0.9), [1.0, -1.0])
        self.assertGreater(state.v[0], 10.0)
        self.assertAlmostEqual(state.v[0], -state.v[1])


class NetworkForwardTest(SimpleTestCase):
    def setUp(self):
        self.params = NetworkParams.initialize(8, 6, seed=1)
        self.inputs = 3.0 * np.random.default_rng(1).uniform(-1.0, 1.0, (60, 6))

    def test_default_parameter_count(self):
        self.assertEqual(NetworkParams.initialize().parameter_count(), (20800, 402))

    def test_matches_single_neuron_kernels(self):
        result = network_forward(self.params, self.inputs)
        self.assertGreater(result.spikes.enc.sum(), 0)
        np.testing.assert_allclose(result.estimates, reference_forward(self.params, self.inputs), atol=1e-12)

    def test_recurrence_arrives_one_step_later(self):
        # one encoding neuron drives hidden 0, which feeds hidden 1 only through w_rec
        zeros = torch.zeros(1, dtype=torch.float64)
        tensors = {
            "enc_weights": torch.zeros(6, 1, dtype=torch.float64).index_fill(0, torch.tensor([0]), 2.0),
            "hid_weights_ff": torch.tensor([[2.0, 0.0]], dtype=torch.float64),
            "hid_weights_rec": torch.tensor([[0.0, 1.0], [0.0, 0.0]], dtype=torch.float64),
            "out_weights": torch.zeros(2, 2, dtype=torch.float64),
            "enc_tau_mem": zeros,
            "enc_tau_syn": zeros,
            "enc_threshold": torch.full((1,), 0.5, dtype=torch.float64),
            "hid_tau_mem": torch.zeros(2, dtype=torch.float64),
            "hid_tau_syn": torch.zeros(2, dtype=torch.float64),
            "hid_threshold": torch.full((2,), 0.5, dtype=torch.float64),
            "out_tau_mem": torch.tensor(0.0, dtype=torch.float64),
            "out_tau_syn": torch.tensor(0.0, dtype=torch.float64),
        }
        inputs = torch.zeros(1, 3, 6, dtype=torch.float64)
        inputs[0, 0, 0] = 1.0
        hidden_currents = []

        def record(block, t, current):
            if block == "hid_weights_ff":
                hidden_currents.append(current[0].tolist())

        trace = run_network(tensors, inputs, on_current=record)
        self.assertEqual(hidden_currents, [[2.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        self.assertEqual(trace.hid_spikes[0].tolist(), [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])

    def test_zero_input_stays_at_rest(self):
        result = network_forward(self.params, np.zeros((30, 6)))
        self.assertEqual(result.spikes.enc.sum(), 0)
        np.testing.assert_array_equal(result.estimates, np.zeros((30, 2)))

    def test_bad_input_shape(self):
        with self.assertRaises(ValueError):
            network_forward(self.params, np.zeros((10, 5)))

    def test_non_finite_state(self):
        inputs = np.zeros((5, 6))
        inputs[2, 0] = np.inf
        with self.assertRaises(NonFiniteStateError) as ctx:
            network_forward(self.params, inputs)
        self.assertEqual(ctx.exception.timestep, 2)

    def test_silenced_hidden_layer_gives_zero_output(self):
        silenced = {"hid": np.ones(self.params.n_hid, dtype=bool)}
        result = network_forward(self.params, self.inputs, silenced=silenced)
        np.testing.assert_array_equal(result.estimates, np.zeros((60, 2)))

    def test_estimate_sequence_normalizes_raw_imu(self):
        spec = NormalizationSpec(x_min=-np.ones(6) * 2, x_max=np.ones(6) * 2)
        params = NetworkParams.initialize(8, 6, seed=1, normalization=spec)
        seq = random_sequence(seed=2, steps=40)
        expected = network_forward(params, spec.apply(seq.imu)).estimates
        np.testing.assert_array_equal(estimate_sequence(params, seq).estimates, expected)

    def test_quantized_copy_snaps_to_grid(self):
        params = NetworkParams.initialize(4, 4, seed=0)
        params = replace(params, out_weights=params.out_weights + 0.001).quantized_copy()
        self.assertTrue(params.quantized)
        np.testing.assert_array_equal(params.out_weights, quantize(params.out_weights, WEIGHT_SPEC))


class PruneTest(SimpleTestCase):
    def setUp(self):
        self.params = NetworkParams.initialize(8, 6, seed=4)
        self.inputs = 3.0 * np.random.default_rng(4).uniform(-1.0, 1.0, (80, 6))
        result = network_forward(self.params, self.inputs)
        self.activity = {"enc": result.spikes.enc_rates, "hid": result.spikes.hid_rates}

    def test_zero_threshold_is_identity(self):
        pruned = prune(self.params, self.activity, 0.0)
        self.assertEqual((pruned.n_enc, pruned.n_hid), (8, 6))
        np.testing.assert_array_equal(
            network_forward(pruned, self.inputs).estimates,
            network_forward(self.params, self.inputs).estimates,
        )

    def test_removal_matches_silencing(self):
        activity = {"enc": np.linspace(0.0, 0.7, 8), "hid": np.array([0.5, 0.0, 0.3, 0.01, 0.2, 0.4])}
        pruned = prune(self.params, activity, 0.05)
        self.assertEqual((pruned.n_enc, pruned.n_hid), (7, 4))
        self.assertEqual(pruned.hid_weights_rec.shape, (4, 4))
        self.assertEqual(pruned.out_weights.shape, (4, 2))
        silenced = network_forward(self.params, self.inputs, silenced=silenced_by(self.params, activity, 0.05))
        np.testing.assert_allclose(network_forward(pruned, self.inputs).estimates, silenced.estimates, atol=1e-12)

    def test_pruning_everything_fails(self):
        with self.assertRaises(PruningError):
            prune(self.params, {"enc": np.zeros(8), "hid": np.ones(6)}, 0.1)
        with self.assertRaises(PruningError):
            prune(self.params, {"enc": np.ones(8), "hid": np.zeros(6)}, 0.1)

    def test_higher_threshold_prunes_more(self):
        activity = {"enc": np.linspace(0.0, 0.7, 8), "hid": np.linspace(0.02, 0.6, 6)}
        pruned = [prune(self.params, activity, t) for t in (0.0, 0.01, 0.05, 0.1, 0.3, 0.5)]
        weights = [p.parameter_count()[0] for p in pruned]
        for smaller, larger in zip(pruned[1:], pruned):
            self.assertLessEqual(smaller.n_enc, larger.n_enc)
            self.assertLessEqual(smaller.n_hid, larger.n_hid)
        self.assertEqual(weights, sorted(weights, reverse=True))
        self.assertLess(weights[-1], weights[0])
