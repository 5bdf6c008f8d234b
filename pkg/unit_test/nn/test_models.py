import unittest

import numpy as np

from dentlab.autodiff.tensor import Tensor
from dentlab.nn.models import (
    ARCHITECTURES,
    UnknownArchitectureException,
    build_model,
    theta_checksum,
)


class BuildModelTest(unittest.TestCase):
    def test__build_model__same_seed_same_parameters(self) -> None:
        # Act
        first = build_model("convnet-bn-small", 10, seed=0)
        second = build_model("convnet-bn-small", 10, seed=0)

        # Assert
        for (name_1, tensor_1), (name_2, tensor_2) in zip(
            first.named_parameters(), second.named_parameters()
        ):
            self.assertEqual(name_1, name_2)
            np.testing.assert_array_equal(tensor_1.data, tensor_2.data)

    def test__build_model__different_seed_different_parameters(self) -> None:
        # Act
        first = build_model("convnet-bn-small", 10, seed=0)
        second = build_model("convnet-bn-small", 10, seed=1)

        # Assert
        self.assertNotEqual(theta_checksum(first), theta_checksum(second))

    def test__build_model__logit_shape(self) -> None:
        for arch in ARCHITECTURES:
            # Arrange
            model = build_model(arch, 10, seed=0)
            x = np.random.default_rng(0).uniform(size=(3, 1, 28, 28)).astype(np.float32)

            # Act
            logits = model.predict(x)

            # Assert
            self.assertEqual(logits.shape, (3, 10))

    def test__build_model__color_images(self) -> None:
        # Arrange
        model = build_model("resnet-8-bn", 10, seed=0, in_channels=3, image_size=32)

        # Act
        logits = model.predict(np.zeros((2, 3, 32, 32), dtype=np.float32))

        # Assert
        self.assertEqual(logits.shape, (2, 10))

    def test__build_model__normalization_after_every_convolution(self) -> None:
        # Act
        model = build_model("convnet-bn-small", 4, seed=0)

        # Assert
        self.assertEqual(len(model.bn_states()), 2)
        self.assertEqual([state.channels for state in model.bn_states()], [16, 32])

    def test__build_model__unknown_architecture(self) -> None:
        # Act / Assert
        with self.assertRaises(UnknownArchitectureException) as context:
            build_model("wide-resnet-28", 10, seed=0)
        for arch in ARCHITECTURES:
            self.assertIn(arch, str(context.exception))

    def test__build_model__too_few_classes(self) -> None:
        # Act / Assert
        with self.assertRaises(ValueError):
            build_model("convnet-bn-small", 1, seed=0)


class ModelTest(unittest.TestCase):
    def setUp(self) -> None:
        self.model = build_model("convnet-bn-small", 4, seed=3)
        self.x = np.random.default_rng(0).uniform(size=(5, 1, 28, 28)).astype(np.float32)

    def test__predict__eval_mode_is_pure(self) -> None:
        # Act
        first = self.model.predict(self.x)
        second = self.model.predict(self.x)

        # Assert
        np.testing.assert_array_equal(first, second)
        np.testing.assert_array_equal(self.model.bn_states()[0].mu, np.zeros(16))

    def test__predict__per_sample_independent_in_eval_mode(self) -> None:
        # Act
        batch = self.model.predict(self.x)
        single = self.model.predict(self.x[2:3])

        # Assert
        np.testing.assert_allclose(batch[2:3], single, rtol=1e-5, atol=1e-5)

    def test__copy__is_independent(self) -> None:
        # Arrange
        duplicate = self.model.copy()

        # Act
        duplicate.parameters()[0].data[:] = 0.0

        # Assert
        self.assertFalse(np.all(self.model.parameters()[0].data == 0.0))

    def test__forward_flops__linear_in_batch_size(self) -> None:
        # Act
        one = self.model.forward_flops(1)
        eight = self.model.forward_flops(8)

        # Assert
        self.assertGreater(one, 0)
        self.assertEqual(eight, 8 * one)

    def test__train__batch_statistics_change_running_mean(self) -> None:
        # Arrange
        self.model.train()

        # Act
        self.model(Tensor(self.x))
        self.model.eval()

        # Assert
        self.assertFalse(np.allclose(self.model.bn_states()[0].mu, 0.0))
        self.assertFalse(self.model.training)

    def test__theta_checksum__ignores_normalization_affine(self) -> None:
        # Arrange
        before = theta_checksum(self.model)

        # Act
        self.model.bn_states()[0].gamma.data[:] = 5.0

        # Assert
        self.assertEqual(theta_checksum(self.model), before)
        self.assertNotEqual(theta_checksum(self.model, exclude_normalization=False), before)

    def test__load_arrays__missing_array(self) -> None:
        # Arrange
        arrays = dict(self.model.named_arrays())
        arrays.pop(next(iter(arrays)))

        # Act / Assert
        with self.assertRaises(KeyError):
            self.model.load_arrays(arrays)
