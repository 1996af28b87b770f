import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropnas import nn
from dropnas.dropout import DropoutKind, DropoutParams
from dropnas.errors import ConfigError, GenomeError, TrainingDiverged
from dropnas.nn import LayerSpec as L
from dropnas.nn import NetworkSpec
from dropnas.supernet import (
    Choice,
    SlotSpec,
    SupernetSpec,
    TrainHyper,
    activate,
    sample_uniform,
    train_supernet,
)

from conftest import ALL_KINDS, four_by_three_supernet, lenet_style_supernet, small_cnn

B, R, K, M = ALL_KINDS


def frequency_table(sizes, draws, seed):
    rng = np.random.default_rng(seed)
    counts = [np.zeros(m) for m in sizes]
    for _ in range(draws):
        for slot, c in enumerate(sample_uniform(sizes, rng)):
            counts[slot][c] += 1
    return [c / draws for c in counts]


def tiny_dataset(spec, n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random((n, *spec.backbone.input_shape)).astype(np.float32)
    y = rng.integers(0, spec.backbone.num_classes, n)
    return x, y


class TestSpec:
    def test_space_size(self):
        assert lenet_style_supernet().space_size == 32
        assert four_by_three_supernet().space_size == 64

    def test_slot_mismatch(self):
        conv = (Choice(B, DropoutParams()),)
        with pytest.raises(ConfigError):
            SupernetSpec(small_cnn(), (SlotSpec(0, conv), SlotSpec(1, conv)))

    def test_block_needs_conv_slot(self):
        backbone = NetworkSpec((L("dropout_slot", slot_index=0), L("linear", out_features=2)), (6,))
        with pytest.raises(ConfigError):
            SupernetSpec(backbone, (SlotSpec(0, (Choice(K, DropoutParams()),)),))

    def test_letters_round_trip(self):
        spec = lenet_style_supernet()
        assert spec.letters((0, 0, 1)) == "B-B-M"
        for g in spec.all_genomes():
            assert spec.parse_letters(spec.letters(g)) == g

    def test_genome_index_is_enumeration_order(self):
        spec = four_by_three_supernet()
        genomes = list(spec.all_genomes())
        assert genomes == sorted(genomes)
        assert [spec.genome_index(g) for g in genomes] == list(range(64))

    def test_out_of_range(self):
        with pytest.raises(GenomeError):
            lenet_style_supernet().check_genome((0, 4, 0))
        with pytest.raises(GenomeError):
            lenet_style_supernet().check_genome((0, 0))

    def test_hash_tracks_content(self):
        a = lenet_style_supernet()
        assert a.hash() == lenet_style_supernet().hash()
        assert a.hash() != lenet_style_supernet(bank_seed=1).hash()


class TestSampling:
    def test_forced(self, rng):
        assert sample_uniform((1, 1, 1), rng) == (0, 0, 0)

    def test_deterministic(self):
        a = sample_uniform((4, 4, 4), np.random.default_rng(9))
        b = sample_uniform((4, 4, 4), np.random.default_rng(9))
        assert a == b

    def test_frequencies(self):
        for freq in frequency_table((4, 4, 4), 10_000, 0):
            assert np.all(np.abs(freq - 0.25) <= 0.02)

    @settings(max_examples=25, deadline=None)
    @given(sizes=st.lists(st.integers(1, 6), min_size=1, max_size=5), seed=st.integers(0, 2**32 - 1))
    def test_in_range(self, sizes, seed):
        rng = np.random.default_rng(seed)
        for _ in range(20):
            g = sample_uniform(sizes, rng)
            assert all(0 <= c < m for c, m in zip(g, sizes))


class TestActivate:
    def test_rate_zero_is_maskless(self, rng):
        zero = tuple(Choice(k, DropoutParams(0.0)) for k in ALL_KINDS)
        fc = (Choice(B, DropoutParams(0.0)), Choice(M, DropoutParams(0.0)))
        spec = SupernetSpec(small_cnn(), (SlotSpec(0, zero), SlotSpec(1, zero), SlotSpec(2, fc)))
        params = nn.init_params(spec.backbone, 0)
        x = rng.random((3, 1, 12, 12)).astype(np.float32)
        plain = nn.forward(spec.backbone, params, x)[-1]
        for g in spec.all_genomes():
            out = nn.forward(spec.backbone, params, x, activate(spec, g, 0, rng))[-1]
            assert np.array_equal(out, plain)

    def test_bank_cycles(self, rng):
        spec = lenet_style_supernet()
        g = (3, 3, 1)
        for t in range(6):
            a = activate(spec, g, t, rng)
            b = activate(spec, g, t + 4, rng)
            for s in a:
                assert np.array_equal(a[s].values, b[s].values)

    def test_weights_untouched(self, rng):
        spec = lenet_style_supernet()
        params = nn.init_params(spec.backbone, 0)
        before = nn.copy_params(params)
        x = rng.random((2, 1, 12, 12)).astype(np.float32)
        for g in [(0, 0, 0), (1, 2, 1), (3, 3, 1)]:
            nn.forward(spec.backbone, params, x, activate(spec, g, 0, rng))
        for i in params:
            for k in params[i]:
                assert np.array_equal(params[i][k], before[i][k])

    def test_bad_genome(self, rng):
        with pytest.raises(GenomeError):
            activate(lenet_style_supernet(), (0, 0, 2), 0, rng)


class TestTraining:
    def test_zero_epochs_is_init(self):
        spec = lenet_style_supernet()
        x, y = tiny_dataset(spec)
        params, rep = train_supernet(spec, x, y, TrainHyper(epochs=0), seed=5)
        init = nn.init_params(spec.backbone, 5)
        assert rep.iterations == 0
        for i in init:
            for k in init[i]:
                assert np.array_equal(params[i][k], init[i][k])

    def test_deterministic(self):
        spec = lenet_style_supernet()
        x, y = tiny_dataset(spec)
        hyper = TrainHyper(epochs=2, batch_size=8)
        a, ra = train_supernet(spec, x, y, hyper, seed=3)
        b, rb = train_supernet(spec, x, y, hyper, seed=3)
        assert ra.epoch_losses == rb.epoch_losses
        for i in a:
            for k in a[i]:
                assert a[i][k].tobytes() == b[i][k].tobytes()

    def test_one_subnetwork_per_iteration(self):
        spec = lenet_style_supernet()
        x, y = tiny_dataset(spec, n=45)
        _, rep = train_supernet(spec, x, y, TrainHyper(epochs=3, batch_size=10), seed=0)
        assert rep.iterations == 3 * 5
        assert sum(rep.genome_counts.values()) == rep.iterations

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_iteration(self):
        spec = lenet_style_supernet()
        x, y = tiny_dataset(spec)
        with pytest.raises(TrainingDiverged, match="iteration"):
            train_supernet(spec, x * 1e30, y, TrainHyper(epochs=1, lr=1e6), seed=0)

    def test_empty_dataset(self):
        spec = lenet_style_supernet()
        with pytest.raises(ConfigError):
            train_supernet(spec, np.zeros((0, 1, 12, 12)), np.zeros(0, dtype=int), TrainHyper(), 0)

    @pytest.mark.slow
    def test_mlp_loss_decreases_on_mnist(self, mnist):
        x, y = mnist
        backbone = NetworkSpec(
            (
                L("flatten"),
                L("linear", out_features=64),
                L("relu"),
                L("dropout_slot", slot_index=0),
                L("linear", out_features=10),
            ),
            (1, 28, 28),
        )
        fc = (Choice(B, DropoutParams(0.5)), Choice(M, DropoutParams(0.5)))
        spec = SupernetSpec(backbone, (SlotSpec(0, fc),))
        _, rep = train_supernet(spec, x, y, TrainHyper(epochs=3), seed=0)
        assert len(rep.epoch_losses) == 3
        assert rep.epoch_losses[-1] < rep.epoch_losses[0]
