"""PFM (portable float map) and PPM preview I/O.

PFM files are written little-endian ("PF", scale -1.0) with scanlines bottom
to top; values round-trip bit-exactly at float32. PPM previews are 8-bit
after clamping to [0, 1] and applying the sRGB transfer curve.
"""

import numpy as np

from flowtrace.errors import DimensionMismatch


def write_pfm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"expected (H, W, 3) image, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        channels = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    img = data.reshape(h, w, channels)[::-1]
    return np.ascontiguousarray(img if channels == 3 else img[..., 0])


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def tonemap(img: np.ndarray) -> np.ndarray:
    """Clamp + sRGB transfer; the common ground for PSNR and previews."""
    return linear_to_srgb(np.asarray(img, dtype=np.float64))


def psnr(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB after tone mapping; +inf for
    identical images."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((tonemap(a) - tonemap(b)) ** 2))
    if mse == 0.0:
        return np.inf
    return 10.0 * np.log10(1.0 / mse)


def write_ppm(path, img: np.ndarray):
    """8-bit tone-mapped preview of a linear-radiance image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"expected (H, W, 3) image, got {img.shape}")
    u8 = np.clip(np.rint(tonemap(img) * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(u8.tobytes())
