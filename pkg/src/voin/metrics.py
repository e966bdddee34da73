"""Evaluation metrics: PSNR, SSIM, endpoint error, mask IoU.

All image inputs are float arrays in [0, 1]. Region arguments restrict the
pixel set; SSIM follows the standard 11x11 Gaussian (sigma 1.5) formulation
on ITU-R 601 luma with valid-mode windows.
"""

import numpy as np

PSNR_CAP = 100.0


def psnr(reference, test, mask=None):
    """Peak signal-to-noise ratio in dB, capped at 100 for near-zero MSE.

    mask, if given, selects pixels (broadcast over channels).
    """
    a = np.asarray(reference, np.float64)
    b = np.asarray(test, np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr shape mismatch %r vs %r" % (a.shape, b.shape))
    d = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask) > 0
        if m.shape != a.shape[:m.ndim]:
            raise ValueError("psnr mask shaped %r does not match %r"
                             % (m.shape, a.shape))
        d = d[m]
    if d.size == 0:
        return PSNR_CAP
    mse = float(d.mean())
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def _luma(image):
    image = np.asarray(image, np.float64)
    if image.ndim == 2:
        return image
    return (0.299 * image[..., 0] + 0.587 * image[..., 1]
            + 0.114 * image[..., 2])


def _gaussian_kernel(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img, k):
    # separable valid-mode correlation
    out = np.apply_along_axis(lambda r: np.convolve(r, k[::-1], mode="valid"), 1, img)
    out = np.apply_along_axis(lambda c: np.convolve(c, k[::-1], mode="valid"), 0, out)
    return out


def ssim(reference, test, window=11, sigma=1.5):
    """Mean structural similarity on luma over valid windows."""
    a = _luma(reference)
    b = _luma(test)
    if a.shape != b.shape:
        raise ValueError("ssim shape mismatch %r vs %r" % (a.shape, b.shape))
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError("ssim needs frames of at least %dx%d pixels" % (window, window))
    k = _gaussian_kernel(window, sigma)
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def ssim_clip(reference, test, window=11, sigma=1.5):
    """SSIM averaged over the frames of a clip, (T, H, W, 3)."""
    vals = [ssim(reference[t], test[t], window, sigma)
            for t in range(reference.shape[0])]
    return float(np.mean(vals))


def epe(flow_a, flow_b, mask=None):
    """Mean endpoint error in pixels between two (..., 2) flow fields."""
    a = np.asarray(flow_a, np.float64)
    b = np.asarray(flow_b, np.float64)
    if a.shape != b.shape:
        raise ValueError("epe shape mismatch %r vs %r" % (a.shape, b.shape))
    err = np.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])
    if mask is not None:
        m = np.asarray(mask) > 0
        if m.shape != err.shape:
            raise ValueError("epe mask shaped %r does not match %r"
                             % (m.shape, err.shape))
        err = err[m]
    if err.size == 0:
        return 0.0
    return float(err.mean())


def miou(pred, target):
    """Mean per-frame intersection-over-union of binary masks, in percent.

    Frames where both masks are empty count as a perfect match.
    """
    p = np.asarray(pred) > 0
    t = np.asarray(target) > 0
    if p.shape != t.shape:
        raise ValueError("miou shape mismatch %r vs %r" % (p.shape, t.shape))
    if p.ndim == 2:
        p = p[None]
        t = t[None]
    vals = []
    for i in range(p.shape[0]):
        union = int((p[i] | t[i]).sum())
        if union == 0:
            vals.append(1.0)
        else:
            vals.append(int((p[i] & t[i]).sum()) / union)
    return float(np.mean(vals) * 100.0)
