import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenerec.descriptors import (DaisyParams, DescriptorError, HogParams, daisy_grid,
                                  daisy_positions, gaussian_kernel, gradient, hog)


def gradient_oracle(img):
    rows, cols = img.shape
    gx = np.zeros((rows, cols))
    gy = np.zeros((rows, cols))
    for y in range(rows):
        for x in range(cols):
            if cols > 1:
                left = img[y, x - 1] if x > 0 else img[y, x]
                right = img[y, x + 1] if x < cols - 1 else img[y, x]
                gx[y, x] = right - left
            if rows > 1:
                up = img[y - 1, x] if y > 0 else img[y, x]
                down = img[y + 1, x] if y < rows - 1 else img[y, x]
                gy[y, x] = down - up
    return gx, gy


def hog_oracle(img, p: HogParams):
    """Pixel-by-pixel loops over cells and blocks."""
    gx, gy = gradient_oracle(img)
    cy, cx = p.pixels_per_cell
    by, bx = p.cells_per_block
    ncy, ncx = img.shape[0] // cy, img.shape[1] // cx
    cells = np.zeros((ncy, ncx, p.orientations))
    for y in range(ncy * cy):
        for x in range(ncx * cx):
            mag = math.hypot(gx[y, x], gy[y, x])
            theta = math.atan2(gy[y, x], gx[y, x]) % math.pi
            b = min(int(theta / (math.pi / p.orientations)), p.orientations - 1)
            cells[y // cy, x // cx, b] += mag
    out = []
    for i in range(ncy - by + 1):
        for j in range(ncx - bx + 1):
            v = cells[i:i + by, j:j + bx].ravel()
            n = math.sqrt(float(v @ v))
            if n == 0:
                out.append(v)
                continue
            v = np.minimum(v / n, p.block_norm_clip)
            out.append(v / math.sqrt(float(v @ v)))
    return np.concatenate(out)


def daisy_point_oracle(img, p: DaisyParams, row, col):
    """Direct 2-D Gaussian window sums on a mirror-padded copy, at one point only."""
    gx, gy = gradient_oracle(img)
    H = p.orientation_bins
    maps = []
    for o in range(H):
        t = 2 * math.pi * o / H
        maps.append(np.maximum(gx * math.cos(t) + gy * math.sin(t), 0.0))

    def blurred(m, sigma, y, x):
        r = int(math.ceil(4 * sigma))
        g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
        g /= g.sum()
        pad = np.pad(m, r, mode="symmetric")
        win = pad[y:y + 2 * r + 1, x:x + 2 * r + 1]
        return float(np.sum(np.outer(g, g) * win))

    def hist(sigma, y, x):
        h = np.array([blurred(m, sigma, y, x) for m in maps])
        n = np.linalg.norm(h)
        return h / n if n > 0 else h

    parts = [hist(p.base_sigma, row, col)]
    for j in range(p.rings):
        rad = p.radius * (j + 1) / p.rings
        for t in range(p.histograms_per_ring):
            phi = 2 * math.pi * t / p.histograms_per_ring
            dy, dx = rad * math.sin(phi), rad * math.cos(phi)
            # nearest pixel, halves away from zero
            ry = int(math.copysign(math.floor(abs(round(dy, 9)) + 0.5), dy))
            rx = int(math.copysign(math.floor(abs(round(dx, 9)) + 0.5), dx))
            parts.append(hist(p.base_sigma * (j + 1), row + ry, col + rx))
    return np.concatenate(parts)


class TestGradient:
    def test_constant(self):
        gx, gy = gradient(np.full((5, 7), 0.3))
        assert not gx.any() and not gy.any()

    def test_ramp(self):
        img = np.tile(np.arange(10) / 10.0, (6, 1))
        gx, gy = gradient(img)
        np.testing.assert_allclose(gx[:, 1:-1], 0.2)
        assert not gy.any()

    def test_matches_oracle(self, rng):
        img = rng.random((8, 8))
        for got, want in zip(gradient(img), gradient_oracle(img)):
            np.testing.assert_array_equal(got, want)

    def test_degenerate_axes(self, rng):
        img = rng.random((1, 6))
        gx, gy = gradient(img)
        assert not gy.any()
        np.testing.assert_array_equal(gx, gradient_oracle(img)[0])


class TestHog:
    def test_constant_64(self):
        v = hog(np.full((64, 64), 0.5))
        assert v.shape == (1764,) and not v.any()

    def test_length_100(self, rng):
        assert hog(rng.random((100, 100))).shape == (4356,)

    def test_vertical_edge_single_bin(self):
        img = np.zeros((32, 32))
        img[:, 16:] = 1.0
        cells = hog(img).reshape(-1, 9)
        assert cells[:, 0].sum() > 0
        assert not cells[:, 1:].any()

    def test_horizontal_edge_uses_middle_bin(self):
        img = np.zeros((32, 32))
        img[16:, :] = 1.0
        cells = hog(img).reshape(-1, 9)
        # theta = pi/2 falls in bin floor(4.5) = 4
        assert not np.delete(cells, 4, axis=1).any()

    @pytest.mark.parametrize("shape,params", [
        ((40, 48), HogParams()),
        ((33, 29), HogParams(orientations=6, pixels_per_cell=(5, 7), cells_per_block=(3, 2))),
        ((24, 24), HogParams(orientations=12, pixels_per_cell=(4, 4), cells_per_block=(1, 1),
                             block_norm_clip=1.0)),
    ])
    def test_matches_oracle(self, rng, shape, params):
        img = rng.random(shape)
        np.testing.assert_allclose(hog(img, params), hog_oracle(img, params), atol=1e-12)

    def test_smaller_than_block(self):
        with pytest.raises(DescriptorError):
            hog(np.zeros((15, 64)))

    @settings(max_examples=5, deadline=None, derandomize=True)
    @given(st.integers(8, 90), st.integers(8, 90), st.integers(2, 12), st.integers(2, 8),
           st.integers(2, 8), st.integers(1, 3), st.integers(1, 3))
    def test_length_formula(self, rows, cols, nb, cy, cx, by, bx):
        p = HogParams(orientations=nb, pixels_per_cell=(cy, cx), cells_per_block=(by, bx))
        ncy, ncx = rows // cy, cols // cx
        if ncy < by or ncx < bx:
            with pytest.raises(DescriptorError):
                hog(np.zeros((rows, cols)), p)
            return
        want = (ncy - by + 1) * (ncx - bx + 1) * by * bx * nb
        v = hog(np.random.default_rng(rows * cols).random((rows, cols)), p)
        assert v.shape == (want,) == (p.descriptor_length((rows, cols)),)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(0.1, 10))
    def test_norms_and_invariance(self, seed, shift, scale):
        img = np.random.default_rng(seed).random((40, 40))
        base = hog(img)
        blocks = base.reshape(-1, 2 * 2 * 9)
        assert np.all(np.isfinite(base))
        assert np.all(np.linalg.norm(blocks, axis=1) <= 1 + 1e-6)
        np.testing.assert_allclose(hog(img + shift), base, atol=1e-9)
        np.testing.assert_allclose(hog(img * scale), base, atol=1e-9)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            HogParams(orientations=1)
        with pytest.raises(ValueError):
            HogParams(block_norm_clip=0.0)
        with pytest.raises(ValueError):
            HogParams(pixels_per_cell=(0, 8))


SMALL_DAISY = DaisyParams(radius=6, rings=2, histograms_per_ring=4, orientation_bins=4, step=5,
                          base_sigma=1.0)


class TestDaisy:
    def test_default_length(self):
        assert DaisyParams().descriptor_length == 200

    def test_constant_image(self):
        pos, d = daisy_grid(np.full((64, 64), 0.7))
        assert d.shape == (len(pos), 200) and not d.any()

    def test_grid_positions(self):
        pos = daisy_positions((64, 50), DaisyParams())
        assert set(pos[:, 0]) == {15, 23, 31, 39, 47}
        assert set(pos[:, 1]) == {15, 23, 31}

    def test_too_small(self):
        with pytest.raises(DescriptorError):
            daisy_grid(np.zeros((30, 64)))
        daisy_grid(np.zeros((31, 31)))

    def test_gaussian_kernel(self):
        k = gaussian_kernel(1.6)
        assert k.size == 2 * 7 + 1
        assert k.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(k, k[::-1])

    @pytest.mark.parametrize("params", [DaisyParams(), SMALL_DAISY])
    def test_matches_point_oracle(self, rng, params):
        img = rng.random((64, 64))
        pos, d = daisy_grid(img, params)
        for idx in (0, len(pos) // 2, len(pos) - 1):
            row, col = pos[idx]
            np.testing.assert_allclose(d[idx], daisy_point_oracle(img, params, row, col), atol=1e-6)

    def test_offsets_centre_first(self):
        offs = DaisyParams().sample_offsets()
        assert offs.shape == (25, 2)
        assert tuple(offs[0]) == (0, 0)
        # first ring, phi = 0 lies straight right at distance 5
        assert tuple(offs[1]) == (0, 5)
        assert tuple(offs[-8]) == (0, 15)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-2, 2), st.floats(0.2, 5))
    def test_norms_and_invariance(self, seed, shift, scale):
        img = np.random.default_rng(seed).random((40, 44))
        img[:, :8] = 0.25  # a flat patch gives some zero histograms
        _, base = daisy_grid(img, SMALL_DAISY)
        assert np.all(np.isfinite(base))
        norms = np.linalg.norm(base.reshape(base.shape[0], -1, 4), axis=-1)
        assert np.all((np.abs(norms - 1) < 1e-6) | (norms < 1e-6))
        np.testing.assert_allclose(daisy_grid(img + shift, SMALL_DAISY)[1], base, atol=1e-8)
        np.testing.assert_allclose(daisy_grid(img * scale, SMALL_DAISY)[1], base, atol=1e-8)
