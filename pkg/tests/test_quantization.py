import numpy as np
import torch
from django.test import SimpleTestCase

from apps.core.exceptions import QuantizationError
from apps.snn.quantization import (
    DECAY_SPEC,
    WEIGHT_SPEC,
    dequantize,
    fake_quantize,
    hardware_integers,
    is_on_grid,
    quantize,
    to_hardware_integer,
)
from apps.snn.runtime import NetworkParams


class QuantizeTest(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_idempotent(self):
        for spec in (WEIGHT_SPEC, DECAY_SPEC):
            values = quantize(self.rng.uniform(-2.0, 2.0, 500), spec)
            np.testing.assert_array_equal(quantize(values, spec), values)

    def test_error_within_half_step(self):
        values = self.rng.uniform(WEIGHT_SPEC.q_min, WEIGHT_SPEC.q_max, 1000)
        error = np.abs(quantize(values, WEIGHT_SPEC) - values)
        self.assertTrue(np.all(error <= WEIGHT_SPEC.step / 2 + 1e-15))

    def test_half_rounds_away_from_zero(self):
        half = WEIGHT_SPEC.step / 2
        self.assertEqual(quantize(half, WEIGHT_SPEC), WEIGHT_SPEC.step)
        self.assertEqual(quantize(-half, WEIGHT_SPEC), -WEIGHT_SPEC.step)

    def test_saturates(self):
        self.assertEqual(quantize(2.0, WEIGHT_SPEC), 127.0 / 128.0)
        self.assertEqual(quantize(-2.0, WEIGHT_SPEC), -1.0)
        self.assertEqual(quantize(-0.3, DECAY_SPEC), 0.0)
        self.assertEqual(quantize(1.7, DECAY_SPEC), 1.0)

    def test_decay_rounding(self):
        self.assertEqual(quantize(0.00005, DECAY_SPEC), 0.0)
        self.assertEqual(quantize(0.0002, DECAY_SPEC), 1.0 / 4096)


class HardwareIntegerTest(SimpleTestCase):
    def test_integer_round_trip(self):
        self.assertEqual(to_hardware_integer(0.5, WEIGHT_SPEC), 64)
        self.assertEqual(dequantize(64, WEIGHT_SPEC), 0.5)
        self.assertEqual(to_hardware_integer(1.0, DECAY_SPEC), 4096)
        self.assertEqual(WEIGHT_SPEC.k_min, -128)
        self.assertEqual(WEIGHT_SPEC.k_max, 127)

    def test_off_grid_value_rejected(self):
        with self.assertRaises(QuantizationError):
            to_hardware_integer(0.5 + 1e-6, WEIGHT_SPEC)
        self.assertFalse(is_on_grid(np.array([0.0, 0.001]), DECAY_SPEC))
        self.assertTrue(is_on_grid(np.array([0.0, 1.0 / 4096]), DECAY_SPEC))

    def test_export_initialized_network(self):
        exported = hardware_integers(NetworkParams.initialize(8, 6, seed=3))
        self.assertEqual(exported["enc_weights"].shape, (6, 8))
        self.assertEqual(exported["enc_weights"].dtype, np.int64)
        self.assertTrue(np.all(np.abs(exported["hid_weights_rec"]) <= 128))
        self.assertTrue(np.all((exported["hid_tau_mem"] >= 0) & (exported["hid_tau_mem"] <= 4096)))


class FakeQuantizeTest(SimpleTestCase):
    def test_forward_on_grid_backward_identity(self):
        p = torch.tensor([0.013, -0.4, 0.9], dtype=torch.float64, requires_grad=True)
        out = fake_quantize(p, WEIGHT_SPEC)
        out.sum().backward()
        np.testing.assert_array_equal(out.detach().numpy(), quantize(p.detach().numpy(), WEIGHT_SPEC))
        np.testing.assert_array_equal(p.grad.numpy(), np.ones(3))
