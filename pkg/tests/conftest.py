from pathlib import Path

import numpy as np
import pytest

from dropnas.dropout import DropoutKind, DropoutParams
from dropnas.nn import LayerSpec, NetworkSpec
from dropnas.supernet import Choice, SlotSpec, SupernetSpec

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
CONFIG = ROOT / "configs" / "lenet_mnist.json"
MNIST_IMAGES = DATA / "mnist10k-images-idx3-ubyte.gz"
MNIST_LABELS = DATA / "mnist10k-labels-idx1-ubyte.gz"

ALL_KINDS = (
    DropoutKind.BERNOULLI,
    DropoutKind.RANDOM_CHANNEL,
    DropoutKind.BLOCK,
    DropoutKind.MASKSEMBLES,
)


def small_cnn(n_classes=10, input_shape=(1, 12, 12), c1=4, c2=8, hidden=16):
    L = LayerSpec
    return NetworkSpec(
        (
            L("conv2d", out_channels=c1, kernel_size=3, padding=1),
            L("relu"),
            L("maxpool2x2"),
            L("dropout_slot", slot_index=0),
            L("conv2d", out_channels=c2, kernel_size=3, padding=1),
            L("relu"),
            L("maxpool2x2"),
            L("dropout_slot", slot_index=1),
            L("flatten"),
            L("linear", out_features=hidden),
            L("relu"),
            L("dropout_slot", slot_index=2),
            L("linear", out_features=n_classes),
        ),
        input_shape,
    )


def lenet_style_supernet(backbone=None, bank_seed=0):
    """Two conv slots with all four kinds, one fc slot with {Bernoulli, Masksembles}."""
    backbone = backbone or small_cnn()
    conv = tuple(Choice(k, DropoutParams(0.25, 3, 4, bank_seed)) for k in ALL_KINDS)
    fc = (
        Choice(DropoutKind.BERNOULLI, DropoutParams(0.5)),
        Choice(DropoutKind.MASKSEMBLES, DropoutParams(0.5, 3, 4, bank_seed)),
    )
    return SupernetSpec(backbone, (SlotSpec(0, conv), SlotSpec(1, conv), SlotSpec(2, fc)))


def four_by_three_supernet():
    """Three conv-style slots with four choices each (64 genomes)."""
    L = LayerSpec
    backbone = NetworkSpec(
        (
            L("conv2d", out_channels=4, kernel_size=3, padding=1),
            L("dropout_slot", slot_index=0),
            L("relu"),
            L("conv2d", out_channels=4, kernel_size=3, padding=1),
            L("dropout_slot", slot_index=1),
            L("relu"),
            L("conv2d", out_channels=4, kernel_size=3, padding=1),
            L("dropout_slot", slot_index=2),
            L("flatten"),
            L("linear", out_features=3),
        ),
        (1, 6, 6),
    )
    conv = tuple(Choice(k, DropoutParams(0.25, 3, 4, 0)) for k in ALL_KINDS)
    return SupernetSpec(backbone, tuple(SlotSpec(i, conv) for i in range(3)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist():
    if not MNIST_IMAGES.exists():
        pytest.skip("MNIST subset not present; run scripts/npm_mnist_to_idx.py")
    from dropnas.harness.idx import load_idx

    return load_idx(MNIST_IMAGES, MNIST_LABELS)


# acceptance criteria outcomes, reported in the terminal summary
ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"AC{n:>2} {status}  {text}")
