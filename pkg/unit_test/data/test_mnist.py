import tempfile
import unittest
from pathlib import Path

import numpy as np

from dentlab.data.dataset import DatasetFormatException, Split
from dentlab.data.mnist import load_mnist_idx, write_idx


class LoadMnistIdxTest(unittest.TestCase):
    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)
        rng = np.random.default_rng(0)
        self.images = rng.integers(0, 256, size=(6, 1, 28, 28)) / 255.0
        self.labels = np.array([0, 1, 2, 9, 4, 5])
        self.images_path = self.root / "images-idx3-ubyte"
        self.labels_path = self.root / "labels-idx1-ubyte"

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test__load_mnist_idx__written_pair(self) -> None:
        # Arrange
        write_idx(self.images, self.labels, self.images_path, self.labels_path)

        # Act
        dataset = load_mnist_idx(self.images_path, self.labels_path, Split.TEST)

        # Assert
        self.assertEqual(dataset.images.shape, (6, 1, 28, 28))
        self.assertEqual(dataset.images.dtype, np.float32)
        np.testing.assert_allclose(dataset.images, self.images, atol=1e-6)
        np.testing.assert_array_equal(dataset.labels, self.labels)
        self.assertEqual(dataset.split, Split.TEST)
        self.assertEqual(dataset.num_classes, 10)

    def test__load_mnist_idx__wrong_magic(self) -> None:
        # Arrange
        write_idx(self.images, self.labels, self.images_path, self.labels_path)
        payload = bytearray(self.images_path.read_bytes())
        payload[3] = 0x01
        self.images_path.write_bytes(bytes(payload))

        # Act / Assert
        with self.assertRaises(DatasetFormatException) as context:
            load_mnist_idx(self.images_path, self.labels_path)
        self.assertEqual(context.exception.path, str(self.images_path))
        self.assertIn("magic", str(context.exception))

    def test__load_mnist_idx__truncated_images(self) -> None:
        # Arrange
        write_idx(self.images, self.labels, self.images_path, self.labels_path)
        self.images_path.write_bytes(self.images_path.read_bytes()[:-5])

        # Act / Assert
        with self.assertRaises(DatasetFormatException):
            load_mnist_idx(self.images_path, self.labels_path)

    def test__load_mnist_idx__count_mismatch(self) -> None:
        # Arrange
        write_idx(self.images, self.labels, self.images_path, self.labels_path)
        other_images = self.root / "other-images"
        write_idx(self.images[:4], self.labels[:4], other_images, self.root / "other-labels")

        # Act / Assert
        with self.assertRaises(DatasetFormatException):
            load_mnist_idx(other_images, self.labels_path)

    def test__load_mnist_idx__label_out_of_range(self) -> None:
        # Arrange
        write_idx(self.images, np.array([0, 1, 2, 10, 4, 5]), self.images_path, self.labels_path)

        # Act / Assert
        with self.assertRaises(DatasetFormatException):
            load_mnist_idx(self.images_path, self.labels_path)
