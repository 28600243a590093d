"""Image metrics: SSIM, MS-SSIM, Sobel edge error, masked PSNR/SSIM."""
import numpy as np
import pytest
from scipy import ndimage

from splatphys.core import Mask
from splatphys.metrics import (SsimParams, edge_error, masked_psnr_ssim,
                               ms_ssim, ssim, to_grayscale)


def constant_ssim(mu1, mu2, k1=0.01, k2=0.03, data_range=1.0):
    # for constant images sigma terms vanish and SSIM reduces to the
    # luminance term times C2/(C2) = (2 mu1 mu2 + C1)/(mu1^2 + mu2^2 + C1)
    c1 = (k1 * data_range) ** 2
    return (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)


class TestSsim:
    def test_identity_is_one(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            img = rng.random((40, 40))
            assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        a = np.zeros((32, 32))
        b = np.full((32, 32), 0.5)
        assert ssim(a, b) == pytest.approx(constant_ssim(0.0, 0.5), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.random((33, 47))
        y = rng.random((33, 47))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-14)

    def test_sensitive_to_noise(self):
        rng = np.random.default_rng(2)
        x = rng.random((64, 64))
        y = np.clip(x + rng.normal(0, 0.2, x.shape), 0, 1)
        assert ssim(x, y) < 0.9

    def test_rgb_uses_luma(self):
        rng = np.random.default_rng(3)
        rgb = rng.random((32, 32, 3))
        assert ssim(rgb, rgb.copy()) == pytest.approx(1.0, abs=1e-12)
        luma = to_grayscale(rgb)
        np.testing.assert_allclose(
            luma, 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1]
            + 0.114 * rgb[..., 2])

    def test_window_smaller_than_image_required(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestMsSsim:
    def test_identity_is_one(self):
        rng = np.random.default_rng(4)
        img = rng.random((192, 192))
        res = ms_ssim(img, img)
        assert float(res) == pytest.approx(1.0, abs=1e-12)
        assert not res.fell_back

    def test_small_image_falls_back(self):
        rng = np.random.default_rng(5)
        img = rng.random((64, 64))
        res = ms_ssim(img, img)
        assert res.fell_back
        assert float(res) == pytest.approx(1.0, abs=1e-12)

    def test_matches_explicit_pyramid(self):
        # independently build the 5-level mean-pool pyramid and combine
        # contrast*structure (levels 1-4) with full SSIM (level 5)
        from splatphys.metrics import (MS_SSIM_WEIGHTS, _contrast_structure,
                                       _downsample2)
        rng = np.random.default_rng(6)
        a = ndimage.gaussian_filter(rng.random((192, 192)), 2.0)
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        params = SsimParams()
        la, lb = a.copy(), b.copy()
        ref = 1.0
        for level in range(5):
            if level == 4:
                ref *= max(ssim(la, lb, params), 0.0) ** MS_SSIM_WEIGHTS[level]
            else:
                cs = _contrast_structure(la, lb, params)
                ref *= max(cs, 0.0) ** MS_SSIM_WEIGHTS[level]
                la, lb = _downsample2(la), _downsample2(lb)
        assert float(ms_ssim(a, b)) == pytest.approx(ref, abs=1e-12)

    def test_degrades_with_noise(self):
        rng = np.random.default_rng(11)
        x = ndimage.gaussian_filter(rng.random((192, 192)), 2.0)
        scores = []
        for amp in (0.02, 0.1, 0.3):
            noise = rng.normal(0, amp, x.shape)
            scores.append(float(ms_ssim(x, np.clip(x + noise, 0, 1))))
        assert scores[0] > scores[1] > scores[2]

    def test_value_in_unit_interval(self):
        rng = np.random.default_rng(7)
        x = rng.random((192, 192))
        y = rng.random((192, 192))
        v = float(ms_ssim(x, y))
        assert 0.0 <= v <= 1.0


class TestEdgeError:
    def test_identical_images_zero(self):
        rng = np.random.default_rng(8)
        img = rng.random((48, 48))
        m = Mask(np.ones((48, 48), bool))
        assert edge_error(img, img, m) == 0.0

    def test_matches_manual_sobel(self):
        rng = np.random.default_rng(9)
        a = rng.random((32, 32))
        b = rng.random((32, 32))
        mask = rng.random((32, 32)) > 0.4
        gax = ndimage.sobel(a, axis=0, mode="nearest")
        gay = ndimage.sobel(a, axis=1, mode="nearest")
        gbx = ndimage.sobel(b, axis=0, mode="nearest")
        gby = ndimage.sobel(b, axis=1, mode="nearest")
        err = np.abs(gax - gbx) + np.abs(gay - gby)
        ref = float(np.mean(err[mask]))
        assert edge_error(a, b, Mask(mask)) == pytest.approx(ref, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(10)
        a = rng.random((24, 24))
        b = rng.random((24, 24))
        m = Mask(np.ones((24, 24), bool))
        assert edge_error(a, b, m) == pytest.approx(edge_error(b, a, m),
                                                    abs=1e-14)

    def test_step_edge_hand_computed(self):
        # truth uniform 0; rendered steps 0 -> 1 at column 4. The Sobel x
        # response of an ideal step with replicate padding is 4 on the two
        # columns flanking the edge and 0 elsewhere; Gy is 0 everywhere.
        rendered = np.zeros((8, 8))
        rendered[:, 4:] = 1.0
        truth = np.zeros((8, 8))
        expected = np.zeros((8, 8))
        expected[:, 3] = 4.0
        expected[:, 4] = 4.0
        full = Mask(np.ones((8, 8), bool))
        assert edge_error(rendered, truth, full) == pytest.approx(
            expected.mean(), abs=1e-12)

    def test_empty_mask_raises(self):
        with pytest.raises(ValueError):
            edge_error(np.zeros((8, 8)), np.zeros((8, 8)),
                       Mask(np.zeros((8, 8), bool)))


class TestMaskedPsnrSsim:
    def test_uniform_half_error_psnr(self):
        # MSE = 0.25 on [0,1] range -> 10*log10(1/0.25) = 6.0206 dB
        a = np.zeros((32, 32))
        b = np.full((32, 32), 0.5)
        psnr, _ = masked_psnr_ssim(a, b, Mask(np.ones((32, 32), bool)))
        assert psnr == pytest.approx(6.0206, abs=1e-3)

    def test_identical_images_infinite_psnr(self):
        img = np.full((32, 32), 0.3)
        psnr, s = masked_psnr_ssim(img, img, Mask(np.ones((32, 32), bool)))
        assert np.isinf(psnr)
        assert s == pytest.approx(1.0, abs=1e-12)

    def test_mask_restricts_error_region(self):
        a = np.zeros((32, 32))
        b = np.zeros((32, 32))
        b[:16] = 0.5  # error only in the top half
        bottom = np.zeros((32, 32), bool)
        bottom[16:] = True
        psnr, _ = masked_psnr_ssim(a, b, Mask(bottom))
        assert np.isinf(psnr)

    def test_empty_mask_raises(self):
        with pytest.raises(ValueError):
            masked_psnr_ssim(np.zeros((8, 8)), np.zeros((8, 8)),
                             Mask(np.zeros((8, 8), bool)))
