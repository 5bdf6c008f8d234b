from dentlab.data.dataset import Dataset, DatasetFormatException, Split, resolve_data_path
from dentlab.data.mnist import load_mnist_idx
from dentlab.data.cifar import load_cifar10_binary, write_cifar10_binary
from dentlab.data.shapes import synth_shapes
