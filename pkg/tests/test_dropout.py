import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropnas.dropout import (
    DropoutKind,
    DropoutParams,
    Mask,
    apply,
    block_seed_rate,
    block_seeds,
    build_mask_bank,
    expand_blocks,
    gen_mask,
    kept_channels,
    random_decisions,
)
from dropnas.errors import ConfigError, DegenerateMaskError, DropoutParamError, ShapeError

from conftest import ALL_KINDS

B, R, K, M = ALL_KINDS


def make(kind, params, shape, rng, t=0, batch=None):
    bank = build_mask_bank(params, shape[0]) if kind is M else None
    return gen_mask(kind, params, shape, t=t, rng=rng, bank=bank, batch=batch)


class TestGenMask:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_rate_zero_keeps_everything(self, kind, rng):
        m = make(kind, DropoutParams(rate=0.0), (4, 5, 5), rng)
        assert np.all(m.values == 1)
        assert m.scale == 1.0

    def test_bank_index_wraps(self):
        bank = build_mask_bank(DropoutParams(0.25, mask_count=4), 8)
        a = gen_mask(M, DropoutParams(0.25), (8, 3, 3), t=5, bank=bank)
        b = gen_mask(M, DropoutParams(0.25), (8, 3, 3), t=1, bank=bank)
        assert bank[5] is bank[1]
        assert np.array_equal(a.values, b.values)

    def test_block_gamma(self):
        expected = 0.1 / 9 * 64 / 36
        assert block_seed_rate(0.1, 3, 8) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(0.0197531, abs=1e-7)

    @pytest.mark.parametrize("rate", [1.0, -0.1, 1.5, float("nan")])
    def test_bad_rate(self, rate, rng):
        with pytest.raises(DropoutParamError):
            gen_mask(B, DropoutParams(rate=rate), (4,), rng=rng)

    def test_parameter_error_is_config_error(self):
        assert issubclass(DropoutParamError, ConfigError)

    def test_masksembles_requires_bank(self, rng):
        with pytest.raises(DropoutParamError):
            gen_mask(M, DropoutParams(), (8,), rng=rng)

    def test_degenerate_rate(self, rng):
        with pytest.raises(DegenerateMaskError):
            gen_mask(B, DropoutParams(rate=0.999999), (2,), rng=rng)

    def test_bad_rank(self, rng):
        with pytest.raises(ShapeError):
            gen_mask(B, DropoutParams(), (2, 3), rng=rng)

    def test_block_larger_than_map(self, rng):
        with pytest.raises(DropoutParamError):
            gen_mask(K, DropoutParams(block_size=5), (2, 4, 4), rng=rng)

    def test_channel_mask_planes(self, rng):
        m = gen_mask(R, DropoutParams(0.5), (6, 4, 4), rng=rng)
        assert m.values.shape == (6, 1, 1)
        y = apply(m, np.ones((6, 4, 4)))
        for c in range(6):
            plane = y[c]
            assert np.all(plane == 0) or np.all(plane == plane[0, 0])

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_scale_is_elements_over_ones(self, kind, rng):
        m = make(kind, DropoutParams(0.25), (8, 5, 5), rng)
        full = np.broadcast_to(m.values, (8, 5, 5))
        assert m.scale == pytest.approx(full.size / full.sum())

    def test_batched_scale_per_sample(self, rng):
        m = gen_mask(B, DropoutParams(0.5), (10,), rng=rng, batch=6)
        assert m.values.shape == (6, 10)
        np.testing.assert_allclose(m.scale, 10 / m.values.sum(axis=1))


class TestApply:
    def test_identity(self):
        x = np.arange(6.0)
        assert np.array_equal(apply(Mask(np.ones(6), 1.0), x), x)

    def test_arithmetic(self):
        y = apply(Mask(np.array([1.0, 0.0, 1.0]), 1.5), np.array([2.0, 4.0, 6.0]))
        assert y.tolist() == [3.0, 0.0, 9.0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply(Mask(np.ones(3), 1.0), np.ones(4))
        with pytest.raises(ShapeError):
            apply(Mask(np.ones((3, 1, 1)), 1.0), np.ones((4, 2, 2)))


class TestBank:
    def test_all_ones_at_zero_rate(self):
        bank = build_mask_bank(DropoutParams(0.0, mask_count=4), 8)
        assert len(bank) == 4
        assert all(np.all(m == 1) for m in bank.masks)

    def test_cardinality(self):
        bank = build_mask_bank(DropoutParams(0.5, mask_count=2), 4)
        assert [int(m.sum()) for m in bank.masks] == [2, 2]

    def test_deterministic(self):
        p = DropoutParams(0.3, mask_count=5, seed=11)
        a, b = build_mask_bank(p, 17), build_mask_bank(p, 17)
        assert all(np.array_equal(x, y) for x, y in zip(a.masks, b.masks))

    def test_too_few_channels(self):
        with pytest.raises(ConfigError):
            build_mask_bank(DropoutParams(mask_count=4), 3)

    def test_seed_changes_bank(self):
        a = build_mask_bank(DropoutParams(0.5, mask_count=4, seed=0), 32)
        b = build_mask_bank(DropoutParams(0.5, mask_count=4, seed=1), 32)
        assert any(not np.array_equal(x, y) for x, y in zip(a.masks, b.masks))

    @settings(max_examples=80, deadline=None)
    @given(
        rate=st.floats(0.0, 0.95),
        k=st.integers(2, 8),
        extra=st.integers(0, 40),
        seed=st.integers(0, 2**31),
    )
    def test_each_mask_keeps_ceil(self, rate, k, extra, seed):
        c = k + extra
        bank = build_mask_bank(DropoutParams(rate, mask_count=k, seed=seed), c)
        keep = int(np.ceil((1 - rate) * c - 1e-9))
        assert keep == kept_channels(rate, c)
        assert all(int(m.sum()) == keep for m in bank.masks)
        usage = np.sum(bank.masks, axis=0)
        assert usage.max() - usage.min() <= 1


def test_bernoulli_drop_rate(rng):
    m = gen_mask(B, DropoutParams(0.5), (1_000_000,), rng=rng)
    assert 0.498 <= 1 - m.values.mean() <= 0.502


def test_random_channel_drop_rate(rng):
    m = gen_mask(R, DropoutParams(0.5), (100_000, 2, 2), rng=rng)
    assert 0.498 <= 1 - m.values.mean() <= 0.502


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_unbiased(kind, rng):
    """Mean of apply over 1e5 draws stays within 1% of x at every element."""
    shape = (8, 6, 6)
    params = DropoutParams()
    x = rng.uniform(0.5, 1.5, size=shape)
    draws, chunk = 100_000, 5_000
    bank = build_mask_bank(params, shape[0]) if kind is M else None
    total = np.zeros(shape)
    for start in range(0, draws, chunk):
        if kind is M:
            for t in range(start, start + chunk):
                total += apply(gen_mask(kind, params, shape, t=t, bank=bank), x)
        else:
            m = gen_mask(kind, params, shape, rng=rng, batch=chunk)
            total += apply(m, np.broadcast_to(x, (chunk, *shape))).sum(axis=0)
    rel = np.abs(total / draws - x) / x
    assert rel.max() <= 0.01


@settings(max_examples=40, deadline=None)
@given(
    c=st.integers(1, 3),
    h=st.integers(3, 9),
    w=st.integers(3, 9),
    bs=st.sampled_from([1, 3]),
    rate=st.floats(0.05, 0.6),
    seed=st.integers(0, 10_000),
)
def test_block_structure(c, h, w, bs, rate, seed):
    """Every zero lies inside a bs x bs square centred on a seed (toroidal)."""
    params = DropoutParams(rate, block_size=bs)
    seeds = block_seeds(params, (c, h, w), 1, np.random.default_rng(seed))[0]
    if not seeds.any() or seeds.all():
        return
    values = 1 - expand_blocks(seeds[None], bs)[0]
    r = bs // 2
    oracle = np.ones((c, h, w))
    for ch, i, j in zip(*np.nonzero(seeds)):
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                oracle[ch, (i + di) % h, (j + dj) % w] = 0
    assert np.array_equal(values, oracle)


def test_block_mask_uses_seed_stream():
    params = DropoutParams(0.3, block_size=3)
    shape = (2, 7, 7)
    seeds = block_seeds(params, shape, 1, np.random.default_rng(3))
    m = gen_mask(K, params, shape, rng=np.random.default_rng(3))
    assert np.array_equal(m.values, 1 - expand_blocks(seeds, 3)[0])


def test_masksembles_static():
    params = DropoutParams(0.25)
    bank = build_mask_bank(params, 8)
    first = gen_mask(M, params, (8,), t=2, bank=bank)
    for i in range(1000):
        again = gen_mask(M, params, (8,), t=2, rng=np.random.default_rng(i), bank=bank)
        assert np.array_equal(again.values, first.values)
        assert again.scale == first.scale


def test_granularity_ordering():
    params = DropoutParams(0.25, block_size=3)
    shape = (16, 8, 8)
    counts = [random_decisions(k, params, shape) for k in (B, K, R, M)]
    assert counts[0] == 16 * 64
    assert counts[3] == 0
    assert counts[0] > counts[1] > counts[2] > counts[3]


def test_kind_letters():
    assert [k.letter for k in ALL_KINDS] == ["B", "R", "K", "M"]
    assert DropoutKind.from_letter("K") is K
    assert [k.is_static for k in ALL_KINDS] == [False, False, False, True]
