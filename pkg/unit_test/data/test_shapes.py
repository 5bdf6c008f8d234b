import unittest

import numpy as np

from dentlab.data.dataset import Split
from dentlab.data.shapes import synth_shapes


class SynthShapesTest(unittest.TestCase):
    def test__synth_shapes__balanced_labels_and_pixel_range(self) -> None:
        # Act
        dataset = synth_shapes(42, 4, seed=0)

        # Assert
        self.assertEqual(dataset.images.shape, (42, 1, 28, 28))
        self.assertEqual(sorted(np.bincount(dataset.labels).tolist()), [10, 10, 11, 11])
        self.assertGreaterEqual(float(dataset.images.min()), 0.0)
        self.assertLessEqual(float(dataset.images.max()), 1.0)

    def test__synth_shapes__deterministic_per_seed_and_split(self) -> None:
        # Act
        first = synth_shapes(10, 3, seed=5)
        second = synth_shapes(10, 3, seed=5)
        test = synth_shapes(10, 3, seed=5, split=Split.TEST)

        # Assert
        np.testing.assert_array_equal(first.images, second.images)
        self.assertFalse(np.array_equal(first.images, test.images))

    def test__synth_shapes__invalid_class_counts(self) -> None:
        # Act / Assert
        with self.assertRaises(ValueError):
            synth_shapes(10, 1, seed=0)
        with self.assertRaises(ValueError):
            synth_shapes(10, 9, seed=0)
        with self.assertRaises(ValueError):
            synth_shapes(3, 4, seed=0)
