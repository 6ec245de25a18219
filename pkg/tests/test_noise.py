"""White-noise grid: determinism, moments, scaling, combination, replay."""

import struct

import numpy as np
import pytest
from scipy import stats

from shelab.errors import CapacityError, LatticeAlignmentError
from shelab.noise import (
    LatticeSpec,
    NoiseGrid,
    combine_noises,
    dump_noise,
    increment_stream,
    load_noise,
    sample_noise,
    scale_noise,
    zero_noise,
)

SPEC = LatticeSpec(nt=1000, nx=1000, dt=0.01, dx=0.1)  # dt*dx = 0.001, 1e6 cells


class TestSampling:
    def test_determinism(self):
        a = sample_noise(SPEC, seed=42)
        b = sample_noise(SPEC, seed=42)
        assert np.array_equal(a.increments, b.increments)

    def test_streams_differ(self):
        a = sample_noise(SPEC, seed=42, stream=0)
        b = sample_noise(SPEC, seed=42, stream=1)
        assert not np.array_equal(a.increments, b.increments)
        # independence: correlation of two streams ~ N(0, 1/sqrt(n))
        r = np.corrcoef(a.increments.ravel(), b.increments.ravel())[0, 1]
        assert abs(r) < 3.0 / np.sqrt(a.increments.size)

    def test_variance(self):
        g = sample_noise(SPEC, seed=7)
        v = g.increments.var()
        n = g.increments.size
        assert abs(v - 0.001) < 3.0 * np.sqrt(2.0 / n) * 0.001
        assert abs(g.increments.mean()) < 3.0 * np.sqrt(0.001 / n)

    def test_lag_one_independence(self):
        g = sample_noise(SPEC, seed=9).increments
        n = g.size
        for lagged in (g[1:, :] * g[:-1, :], g[:, 1:] * g[:, :-1]):
            r = lagged.mean() / 0.001
            assert abs(r) < 3.0 / np.sqrt(n)

    def test_ks_standardized(self):
        spec = LatticeSpec(nt=100, nx=1000, dt=0.01, dx=0.1)
        g = sample_noise(spec, seed=11)
        z = g.increments.ravel() / np.sqrt(spec.cell_variance)
        assert stats.kstest(z, "norm").pvalue > 0.01

    def test_stream_matches_grid(self):
        spec = LatticeSpec(nt=333, nx=17, dt=1e-4, dx=0.05)
        grid = sample_noise(spec, seed=123, stream=5).increments
        for block in (1, 7, 64, 1000):
            chunks = np.concatenate(
                list(increment_stream(spec, seed=123, stream=5, block_rows=block))
            )
            assert np.array_equal(chunks, grid)

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            sample_noise(LatticeSpec(nt=1 << 16, nx=1 << 16, dt=1e-6, dx=1e-3), seed=0)

    def test_bad_seed(self):
        with pytest.raises(ValueError):
            sample_noise(SPEC, seed=-1)


class TestScaling:
    def test_identity(self):
        g = sample_noise(SPEC, seed=3)
        assert scale_noise(g, 1.0, 1.5) is g

    def test_cell_variance_matches_scaled_lattice(self):
        g = sample_noise(SPEC, seed=5)
        s = scale_noise(g, 2.0, 1.5)
        assert s.spec.dt == pytest.approx(SPEC.dt * 2 ** 2)
        assert s.spec.dx == pytest.approx(SPEC.dx * 2)
        v = s.increments.var()
        target = s.spec.cell_variance
        n = s.increments.size
        assert abs(v - target) < 3.0 * np.sqrt(2.0 / n) * target

    def test_total_variance_preserved_cellwise(self):
        # 1:1 aggregation: variance of each image cell = dt~ * dx~ = source
        # cell variance times lbar^(6(gamma-1))
        g = sample_noise(SPEC, seed=6)
        s = scale_noise(g, 3.0, 1.25)
        fac = 3.0 ** (6.0 * 0.25)
        assert np.allclose(s.increments, g.increments * 3.0 ** (3.0 * 0.25))
        assert s.spec.cell_variance == pytest.approx(SPEC.cell_variance * fac, rel=1e-12)

    def test_composition_bit_identical(self):
        g = sample_noise(SPEC, seed=8)
        twice = scale_noise(scale_noise(g, 2.0, 1.5), 3.0, 1.5)
        once = scale_noise(g, 6.0, 1.5)
        assert np.array_equal(twice.increments, once.increments)
        assert twice.spec == once.spec

    def test_rejects_nonpositive_lbar(self):
        g = sample_noise(SPEC, seed=1)
        with pytest.raises(ValueError):
            scale_noise(g, 0.0, 1.5)


class TestCombination:
    def test_single_part_identity(self):
        g = sample_noise(SPEC, seed=13)
        c = combine_noises([(1.0, g)])
        assert np.array_equal(c.increments, g.increments)
        assert c.normalized

    def test_orthonormal_weights_stay_white(self):
        a = sample_noise(SPEC, seed=21, stream=0)
        b = sample_noise(SPEC, seed=21, stream=1)
        c = combine_noises([(0.6, a), (0.8, b)])
        assert c.normalized
        v = c.increments.var()
        n = c.increments.size
        assert abs(v - 0.001) < 3.0 * np.sqrt(2.0 / n) * 0.001
        z = c.increments.ravel()[:100000] / np.sqrt(0.001)
        assert stats.kstest(z, "norm").pvalue > 0.01

    def test_unnormalized_flagged(self):
        a = sample_noise(SPEC, seed=22, stream=0)
        b = sample_noise(SPEC, seed=22, stream=1)
        c = combine_noises([(1.0, a), (1.0, b)])
        assert not c.normalized
        v = c.increments.var()
        assert abs(v - 0.002) < 3.0 * np.sqrt(2.0 / c.increments.size) * 0.002

    def test_cellwise_weights(self):
        spec = LatticeSpec(nt=50, nx=40, dt=0.01, dx=0.1)
        a = sample_noise(spec, seed=30, stream=0)
        b = sample_noise(spec, seed=30, stream=1)
        rng = np.random.default_rng(0)
        th = rng.uniform(0, 2 * np.pi, size=(50, 40))
        c = combine_noises([(np.cos(th), a), (np.sin(th), b)])
        assert c.normalized

    def test_spec_mismatch(self):
        a = sample_noise(SPEC, seed=1)
        b = sample_noise(LatticeSpec(nt=1000, nx=1000, dt=0.02, dx=0.1), seed=1)
        with pytest.raises(LatticeAlignmentError):
            combine_noises([(0.6, a), (0.8, b)])

    def test_empty(self):
        with pytest.raises(ValueError):
            combine_noises([])


class TestReplayDump:
    def test_roundtrip(self, tmp_path):
        spec = LatticeSpec(nt=37, nx=19, dt=3e-4, dx=0.07)
        g = sample_noise(spec, seed=99)
        f = tmp_path / "noise.bin"
        dump_noise(g, f)
        back = load_noise(f)
        assert back.spec == g.spec
        assert back.seed == 99
        assert np.array_equal(back.increments, g.increments)

    def test_header_layout(self, tmp_path):
        spec = LatticeSpec(nt=4, nx=3, dt=0.5, dx=0.25)
        g = sample_noise(spec, seed=77)
        f = tmp_path / "n.bin"
        dump_noise(g, f)
        raw = f.read_bytes()
        nt, nx, dt, dx, seed = struct.unpack("<qqddq", raw[:40])
        assert (nt, nx, dt, dx, seed) == (4, 3, 0.5, 0.25, 77)
        payload = np.frombuffer(raw[40:], dtype="<f8").reshape(4, 3)
        assert np.array_equal(payload, g.increments)


class TestZeroNoise:
    def test_all_zero(self):
        z = zero_noise(LatticeSpec(nt=10, nx=5, dt=0.1, dx=0.1))
        assert np.all(z.increments == 0.0)

    def test_shape_validation(self):
        spec = LatticeSpec(nt=10, nx=5, dt=0.1, dx=0.1)
        with pytest.raises(ValueError):
            NoiseGrid(spec=spec, seed=0, increments=np.zeros((5, 10)))
