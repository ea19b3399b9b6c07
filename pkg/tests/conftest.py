"""Shared fixtures: published model fixtures, dataset builders, strategies."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from evonas import (
    Activation,
    ArchKind,
    Dataset,
    Genotype,
    LayerGene,
    ProblemKind,
    SearchConfig,
)
from evonas.genotype import FOLLOWERS, LayerKind

A = Activation


def classifier(*genes: LayerGene, arch: ArchKind = ArchKind.MLP) -> Genotype:
    return Genotype(tuple(genes), arch, ProblemKind.CLASSIFICATION)


def regressor(*genes: LayerGene, arch: ArchKind = ArchKind.MLP) -> Genotype:
    return Genotype(tuple(genes), arch, ProblemKind.REGRESSION)


def mlp_classifier(spec, classes: int = 10) -> Genotype:
    """Build an MLP classifier from a compact spec.

    Each entry is ``(units, activation)`` for a dense layer or a bare float
    for a dropout layer; the softmax output layer is appended.
    """
    genes = []
    for entry in spec:
        if isinstance(entry, float):
            genes.append(LayerGene.dropout(entry))
        else:
            units, act = entry
            genes.append(LayerGene.dense(units, act))
    genes.append(LayerGene.dense(classes, A.SOFTMAX))
    return classifier(*genes)


def mlp_regressor(spec) -> Genotype:
    genes = []
    for entry in spec:
        if isinstance(entry, float):
            genes.append(LayerGene.dropout(entry))
        else:
            units, act = entry
            genes.append(LayerGene.dense(units, act))
    genes.append(LayerGene.dense(1, A.LINEAR))
    return regressor(*genes)


# --- published fixture models -------------------------------------------------

@pytest.fixture
def stacked_example() -> Genotype:
    """The six-layer worked example model (264/464/872 ReLU with two dropouts)."""
    return mlp_classifier([(264, A.RELU), 0.65, (464, A.RELU), 0.35, (872, A.RELU)])


@pytest.fixture
def crossover_parents() -> tuple[Genotype, Genotype]:
    base = mlp_classifier([(264, A.RELU), 0.65, (464, A.RELU), 0.35, (872, A.RELU)])
    donor = mlp_classifier(
        [(56, A.SIGMOID), 0.25, (360, A.SIGMOID), (480, A.SIGMOID), (88, A.SIGMOID), 0.2]
    )
    return base, donor


@pytest.fixture
def crossover_child() -> Genotype:
    return mlp_classifier(
        [(264, A.RELU), (360, A.RELU), (480, A.RELU), (88, A.RELU), (872, A.RELU)]
    )


#: Donor-segment pairs enumerated in the worked crossover example.
LISTED_PAIRS = [
    (0, 0), (0, 2), (0, 4), (0, 5), (1, 2), (1, 4), (1, 5),
    (2, 2), (2, 4), (2, 5), (4, 4), (4, 5), (5, 5),
]

# Published (spec, accuracy, parameter count, fitness, alpha) rows. Dense
# entries are (units, activation); floats are dropout rates.
INITIAL_POPULATION_TABLE = [  # alpha = 0.5, input 784
    ([(64, A.SIGMOID), 0.4], 0.917, 50890, 2.7688, 0.5),
    ([(760, A.RELU), 0.5, (608, A.RELU), 0.65], 0.987, 1065378, 3.0812, 0.5),
    ([(864, A.SIGMOID), 0.15, (536, A.SIGMOID), (928, A.SIGMOID)], 0.946, 1649506, 3.3791, 0.5),
    ([(40, A.SIGMOID), 0.45, (912, A.SIGMOID)], 0.921, 77922, 2.8427, 0.5),
    ([(968, A.TANH), (976, A.TANH), (32, A.TANH), 0.15, (808, A.TANH)], 0.966, 1771642, 3.2867, 0.5),
]

BEST_ALPHA_05_TABLE = [  # alpha = 0.5 winners, input 784
    ([(56, A.RELU)], 0.939, 44530, 2.6287, 0.5),
    ([(168, A.RELU)], 0.958, 133570, 2.7736, 0.5),
    ([(40, A.RELU), 0.2], 0.934, 31810, 2.5826, 0.5),
    ([(48, A.RELU), (48, A.RELU)], 0.947, 40522, 2.5693, 0.5),
    ([(312, A.RELU)], 0.950, 248050, 2.9431, 0.5),
]

BEST_ALPHA_03_TABLE = [  # alpha = 0.3 winners, input 784
    ([(32, A.SIGMOID)], 0.915, 25450, 1.9126, 0.3),
    ([(32, A.TANH), (32, A.TANH)], 0.952, 26506, 1.6677, 0.3),
    ([(64, A.TANH)] * 4, 0.972, 63370, 1.6358, 0.3),
    ([(56, A.TANH)], 0.947, 44530, 1.7640, 0.3),
    ([(40, A.TANH)], 0.944, 31810, 1.7412, 0.3),
]

BEST_ALPHA_07_TABLE = [  # alpha = 0.7 winners, input 784
    ([(24, A.RELU)], 0.922, 19090, 3.2284, 0.7),
    ([(104, A.RELU), 0.2], 0.952, 82690, 3.5856, 0.7),
    ([(16, A.RELU), (24, A.RELU)], 0.921, 13218, 3.1158, 0.7),
    ([(56, A.RELU)], 0.945, 44530, 3.4200, 0.7),
    ([(208, A.RELU)], 0.958, 165370, 3.7762, 0.7),
]

RUL_WINNER_TABLE = [  # regression winners, input 336
    ([(104, A.TANH), (824, A.TANH)], 122393),
    ([(264, A.RELU)], 89233),
    ([(80, A.TANH), (80, A.TANH)], 33521),
]


@pytest.fixture
def mnist_search_config() -> SearchConfig:
    """The image-classification reference configuration."""
    return SearchConfig(
        problem=ProblemKind.CLASSIFICATION,
        arch=ArchKind.MLP,
        input_shape=784,
        output_size=10,
        cv_ratio=0.2,
        mutation_prob=0.4,
        more_layers_prob=0.4,
        alpha=0.5,
        population_size=10,
        tournament_size=4,
        crossover_trials=3,
        convergence_pairs=3,
        train_epochs=5,
        max_generations=10,
        experiments=5,
        seed=0,
    )


# --- datasets -------------------------------------------------------------------

@pytest.fixture
def blob_dataset() -> Dataset:
    """Two well-separated Gaussian blobs, 4 features, 2 classes."""
    rng = np.random.default_rng(11)
    n = 120
    X = np.vstack([rng.normal(-2.0, 0.5, (n, 4)), rng.normal(2.0, 0.5, (n, 4))])
    y = np.array([0] * n + [1] * n)
    return Dataset(X, y, ProblemKind.CLASSIFICATION)


def mnist_paths() -> tuple[Path, Path, Path, Path] | None:
    """Locate the IDX image/label files if the environment provides them."""
    candidates = []
    env = os.environ.get("EVONAS_MNIST_DIR")
    if env:
        candidates.append(Path(env))
    candidates += [Path("data/mnist"), Path.home() / "data" / "mnist"]
    names = (
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    )
    for root in candidates:
        found = []
        for name in names:
            plain, gz = root / name, root / (name + ".gz")
            if plain.exists():
                found.append(plain)
            elif gz.exists():
                found.append(gz)
        if len(found) == len(names):
            return tuple(found)
    return None


def require_mnist():
    paths = mnist_paths()
    if paths is None:
        pytest.skip(
            "MNIST IDX files not found (set EVONAS_MNIST_DIR or place them in "
            "data/mnist); this sandbox has no dataset download access"
        )
    return paths


# --- hypothesis strategy for valid genotypes ------------------------------------

from evonas.evolution import DROPOUT_RATE_GRID  # noqa: E402
from evonas.genotype import (  # noqa: E402
    FILTER_CHOICES,
    KERNEL_SIZE_CHOICES,
    KERNEL_STRIDE_CHOICES,
    POOL_SIZE_CHOICES,
    REACHES_OUTPUT,
    UNIT_CHOICES,
)


@st.composite
def layer_genes(draw, kind: LayerKind) -> LayerGene:
    if kind == LayerKind.FULLY_CONNECTED:
        return LayerGene.dense(
            draw(st.sampled_from(UNIT_CHOICES)), draw(st.sampled_from((A.SIGMOID, A.TANH, A.RELU)))
        )
    if kind == LayerKind.RECURRENT:
        return LayerGene.recurrent(
            draw(st.sampled_from(UNIT_CHOICES)), draw(st.sampled_from((A.SIGMOID, A.TANH, A.RELU)))
        )
    if kind == LayerKind.CONVOLUTIONAL:
        return LayerGene.conv(
            draw(st.sampled_from(FILTER_CHOICES)),
            draw(st.sampled_from(KERNEL_SIZE_CHOICES)),
            draw(st.sampled_from(KERNEL_STRIDE_CHOICES)),
            draw(st.sampled_from((A.SIGMOID, A.TANH, A.RELU))),
        )
    if kind == LayerKind.POOLING:
        return LayerGene.pooling(draw(st.sampled_from(POOL_SIZE_CHOICES)))
    return LayerGene.dropout(draw(st.sampled_from(DROPOUT_RATE_GRID)))


@st.composite
def genotypes(
    draw,
    arch: ArchKind | None = None,
    problem: ProblemKind | None = None,
    max_hidden: int = 8,
) -> Genotype:
    """Valid random genotypes that walk the layer follower rules."""
    arch = arch or draw(st.sampled_from(list(ArchKind)))
    problem = problem or draw(st.sampled_from(list(ProblemKind)))
    kind = arch.first_layer_kind
    genes = [draw(layer_genes(kind))]
    for _ in range(draw(st.integers(0, max_hidden - 1))):
        kind = draw(st.sampled_from(sorted(k for k in FOLLOWERS[kind] if k in REACHES_OUTPUT)))
        genes.append(draw(layer_genes(kind)))
    if problem == ProblemKind.CLASSIFICATION:
        genes.append(LayerGene.dense(draw(st.integers(2, 16)), A.SOFTMAX))
    else:
        genes.append(LayerGene.dense(1, A.LINEAR))
    return Genotype(tuple(genes), arch, problem)
