"""
Desk-scale image restoration bench

A linear restorer (bicubic upsampling followed by one k×k filter plus bias) trained
with a weighted sum of pixel, spectral, edge, cycle-consistency and SSIM losses,
scored by PSNR, SSIM, LR-PSNR and a Laplacian high-frequency proxy.

Conventions: single-channel images in [0, 1]; borders use half-sample symmetric
reflection everywhere; the FFT loss uses the unnormalized forward transform and
compares real and imaginary parts separately.
"""

import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import structlog
from scipy import ndimage

from app.core.exceptions import EvaluatorError, ValidationError
from app.schemas.config import LOSS_KINDS, ProblemSection
from app.schemas.restoration import MetricVector

logger = structlog.get_logger(__name__)

PSNR_CEILING_DB = 100.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 5.0 / SSIM_SIGMA  # 11×11 window
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
FD_STEP = 1e-5
ANALYTIC_KINDS = ("l1", "l2", "gradient", "cycle")


# -- resampling ---------------------------------------------------------------

def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel"""
    t = np.abs(np.asarray(t, dtype=float))
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _reflect_index(j: int, n: int) -> int:
    period = 2 * n
    j = j % period
    return j if j < n else period - 1 - j


@lru_cache(maxsize=64)
def resize_matrix(in_len: int, out_len: int) -> np.ndarray:
    """(out_len, in_len) bicubic resampling operator; antialiased when shrinking

    Rows sum to one, so constants are preserved.
    """
    ratio = out_len / in_len
    stretch = min(ratio, 1.0)
    support = 2.0 / stretch
    matrix = np.zeros((out_len, in_len))
    for i in range(out_len):
        center = (i + 0.5) / ratio - 0.5
        first = int(np.floor(center - support))
        last = int(np.ceil(center + support))
        for j in range(first, last + 1):
            weight = float(cubic_kernel((center - j) * stretch)) * stretch
            if weight != 0.0:
                matrix[i, _reflect_index(j, in_len)] += weight
    matrix /= matrix.sum(axis=1, keepdims=True)
    matrix.setflags(write=False)
    return matrix


def resize(images: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Separable bicubic resize over the last two axes"""
    rows = resize_matrix(images.shape[-2], out_height)
    cols = resize_matrix(images.shape[-1], out_width)
    return np.einsum("oh,...hw,pw->...op", rows, images, cols)


def downsample(images: np.ndarray, scale: int) -> np.ndarray:
    h, w = images.shape[-2:]
    if h % scale or w % scale:
        raise ValidationError("image size must be divisible by the scale factor")
    return resize(images, h // scale, w // scale)


def upsample(images: np.ndarray, scale: int) -> np.ndarray:
    h, w = images.shape[-2:]
    return resize(images, h * scale, w * scale)


# -- linear filters -------------------------------------------------------------

def _filter_axis(images: np.ndarray, weights: Sequence[float], axis: int) -> np.ndarray:
    return ndimage.correlate1d(images, np.asarray(weights, dtype=float), axis=axis, mode="reflect")


def sobel_horizontal(images: np.ndarray) -> np.ndarray:
    return _filter_axis(_filter_axis(images, [-1.0, 0.0, 1.0], -1), [1.0, 2.0, 1.0], -2)


def sobel_vertical(images: np.ndarray) -> np.ndarray:
    return _filter_axis(_filter_axis(images, [-1.0, 0.0, 1.0], -2), [1.0, 2.0, 1.0], -1)


def laplacian(images: np.ndarray) -> np.ndarray:
    """3×3 Laplacian [[0,1,0],[1,−4,1],[0,1,0]]"""
    return _filter_axis(images, [1.0, -2.0, 1.0], -1) + _filter_axis(images, [1.0, -2.0, 1.0], -2)


def _gaussian_blur(images: np.ndarray) -> np.ndarray:
    sigma = [0.0] * (images.ndim - 2) + [SSIM_SIGMA, SSIM_SIGMA]
    return ndimage.gaussian_filter(images, sigma=sigma, truncate=SSIM_TRUNCATE, mode="reflect")


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM with an 11×11 Gaussian window (σ = 1.5) on unit range"""
    mu_a = _gaussian_blur(a)
    mu_b = _gaussian_blur(b)
    var_a = _gaussian_blur(a * a) - mu_a * mu_a
    var_b = _gaussian_blur(b * b) - mu_b * mu_b
    cov = _gaussian_blur(a * b) - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return numerator / denominator


def _image_mean(values: np.ndarray) -> np.ndarray:
    """Mean over the last two axes"""
    return values.mean(axis=(-2, -1))


# -- dataset --------------------------------------------------------------------

@dataclass(frozen=True)
class ImagePair:
    hr: np.ndarray
    lr: np.ndarray


@dataclass(frozen=True)
class Dataset:
    train: List[ImagePair]
    validation: List[ImagePair]
    scale: int


def _procedural_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    image = np.full((size, size), 0.5)
    max_frequency = max(1, size // 8)
    for _ in range(3):
        fx, fy = rng.integers(-max_frequency, max_frequency + 1, size=2)
        amplitude = rng.uniform(0.05, 0.15)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        image += amplitude * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)

    angle = rng.uniform(0.0, np.pi)
    offset = rng.uniform(0.3, 0.7)
    step = rng.uniform(-0.3, 0.3)
    image += step * ((np.cos(angle) * xx + np.sin(angle) * yy) > offset * (np.cos(angle) + np.sin(angle)))

    for _ in range(2):
        r0, c0 = rng.integers(0, size - 2, size=2)
        r1 = rng.integers(r0 + 2, size + 1)
        c1 = rng.integers(c0 + 2, size + 1)
        image[r0:r1, c0:c1] += rng.uniform(-0.2, 0.2)
    return np.clip(image, 0.0, 1.0)


def synthesize_dataset(seed: int, count: int, size: int, scale: int) -> Dataset:
    """Deterministic procedural HR images, bicubic LR, 80/20 split by index"""
    if size % scale != 0:
        raise ValidationError("image size must be divisible by the scale factor")
    if count < 2:
        raise ValidationError("need at least two images for a train/validation split")
    if size // scale < 8:
        raise ValidationError("images must be at least 8 pixels on each side")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        hr = _procedural_image(rng, size)
        pairs.append(ImagePair(hr=hr, lr=downsample(hr, scale)))
    n_train = min(max(1, int(round(0.8 * count))), count - 1)
    return Dataset(train=pairs[:n_train], validation=pairs[n_train:], scale=scale)


def export_pgm(image: np.ndarray, path: Union[str, Path], binary: bool = True) -> Path:
    """Write a [0, 1] image as 8-bit PGM (P5, or P2 when binary is False)"""
    path = Path(path)
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = pixels.shape
    if binary:
        path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in pixels)
        path.write_text(f"P2\n{width} {height}\n255\n{rows}\n", encoding="ascii")
    return path


# -- restorer -------------------------------------------------------------------

@dataclass(frozen=True)
class RestorerParams:
    filter: np.ndarray
    bias: float = 0.0

    def __post_init__(self) -> None:
        f = np.asarray(self.filter, dtype=float)
        if f.ndim != 2 or f.shape[0] != f.shape[1] or f.shape[0] % 2 == 0:
            raise ValidationError("filter must be square with odd width")
        if f.size + 1 > 128:
            raise ValidationError("restorer is limited to 128 parameters")
        object.__setattr__(self, "filter", f)

    @classmethod
    def identity(cls, size: int = 5) -> "RestorerParams":
        f = np.zeros((size, size))
        f[size // 2, size // 2] = 1.0
        return cls(filter=f, bias=0.0)

    @property
    def size(self) -> int:
        return int(self.filter.shape[0])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.filter.ravel(), [self.bias]])

    @classmethod
    def from_vector(cls, theta: np.ndarray, size: int) -> "RestorerParams":
        return cls(filter=np.asarray(theta[:-1]).reshape(size, size), bias=float(theta[-1]))


def _patch_stack(up: np.ndarray, size: int) -> np.ndarray:
    """(k², ..., H, W) shifted copies so that correlate(up, f) = Σ f_k · stack_k"""
    r = size // 2
    pad = [(0, 0)] * (up.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(up, pad, mode="symmetric")
    h, w = up.shape[-2:]
    return np.stack([
        padded[..., r + di: r + di + h, r + dj: r + dj + w]
        for di in range(-r, r + 1)
        for dj in range(-r, r + 1)
    ])


def restore(params: RestorerParams, lr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic upsample, correlate with the filter (reflect borders), add bias"""
    up = upsample(np.asarray(lr, dtype=float), scale)
    stack = _patch_stack(up, params.size)
    return np.tensordot(params.filter.ravel(), stack, axes=1) + params.bias


# -- losses ---------------------------------------------------------------------

def _check_pair(sr: np.ndarray, hr: np.ndarray) -> None:
    if sr.shape != hr.shape:
        raise ValidationError("sr and hr differ in size", details={"sr": list(sr.shape), "hr": list(hr.shape)})


def _fft_loss(sr: np.ndarray, hr: np.ndarray) -> np.ndarray:
    delta = np.fft.fft2(sr) - np.fft.fft2(hr)
    return _image_mean(np.abs(delta.real) + np.abs(delta.imag))


def _per_image_loss(kind: str, sr: np.ndarray, hr: np.ndarray, lr: Optional[np.ndarray], scale: int) -> np.ndarray:
    if kind == "l1":
        return _image_mean(np.abs(sr - hr))
    if kind == "l2":
        return _image_mean((sr - hr) ** 2)
    if kind == "fft":
        return _fft_loss(sr, hr)
    if kind == "gradient":
        return (
            _image_mean(np.abs(sobel_horizontal(sr) - sobel_horizontal(hr)))
            + _image_mean(np.abs(sobel_vertical(sr) - sobel_vertical(hr)))
        )
    if kind == "cycle":
        if lr is None:
            raise ValidationError("cycle loss needs the low-resolution input")
        down = downsample(sr, scale)
        if down.shape != lr.shape:
            raise ValidationError("lr size inconsistent with scale")
        return _image_mean(np.abs(down - lr))
    if kind == "ssim":
        return 1.0 - _image_mean(ssim_map(sr, hr))
    raise ValidationError(f"unknown loss kind: {kind}")


def loss_value(
    kind: str,
    sr: np.ndarray,
    hr: np.ndarray,
    lr: Optional[np.ndarray] = None,
    scale: int = 2,
) -> float:
    """Mean loss over the images in sr/hr (a single image or a stack)"""
    sr = np.asarray(sr, dtype=float)
    hr = np.asarray(hr, dtype=float)
    _check_pair(sr, hr)
    value = float(np.mean(_per_image_loss(kind, sr, hr, lr, scale)))
    return max(value, 0.0)


def combined_loss(
    weights: Sequence[float],
    enabled: Sequence[str],
    sr: np.ndarray,
    hr: np.ndarray,
    lr: Optional[np.ndarray] = None,
    scale: int = 2,
) -> float:
    """Σ ω_i L_i"""
    if len(weights) != len(enabled):
        raise ValidationError("weights and enabled losses differ in length")
    return float(sum(
        w * loss_value(kind, sr, hr, lr, scale)
        for w, kind in zip(weights, enabled)
        if w != 0.0
    ))


@dataclass
class PreparedBatch:
    """Training images with the linear feature stacks the analytic gradients need

    Row k of every stack is the response of parameter k (filter taps, then bias).
    """
    hr: np.ndarray
    lr: np.ndarray
    scale: int
    size: int
    stack: np.ndarray = field(init=False)
    sobel_h: np.ndarray = field(init=False)
    sobel_v: np.ndarray = field(init=False)
    down: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        up = upsample(self.lr, self.scale)
        taps = _patch_stack(up, self.size)
        self.stack = np.concatenate([taps, np.ones((1,) + up.shape)], axis=0)
        self.sobel_h = sobel_horizontal(self.stack)
        self.sobel_v = sobel_vertical(self.stack)
        self.down = downsample(self.stack, self.scale)

    @classmethod
    def from_pairs(cls, pairs: Sequence[ImagePair], scale: int, size: int) -> "PreparedBatch":
        return cls(
            hr=np.stack([p.hr for p in pairs]),
            lr=np.stack([p.lr for p in pairs]),
            scale=scale,
            size=size,
        )

    def predict(self, theta: np.ndarray) -> np.ndarray:
        return np.tensordot(theta, self.stack, axes=1)


def _contract(features: np.ndarray, residual_weight: np.ndarray) -> np.ndarray:
    """Σ over images and pixels of features_k · residual_weight, per parameter k"""
    axes = tuple(range(1, features.ndim))
    return np.tensordot(features, residual_weight, axes=(axes, tuple(range(residual_weight.ndim))))


def loss_gradient(kind: str, theta: np.ndarray, batch: PreparedBatch) -> np.ndarray:
    """d L_kind / d θ: analytic for l1/l2/gradient/cycle, central differences otherwise"""
    sr = batch.predict(theta)
    if kind == "l1":
        return _contract(batch.stack, np.sign(sr - batch.hr)) / sr.size
    if kind == "l2":
        return _contract(batch.stack, 2.0 * (sr - batch.hr)) / sr.size
    if kind == "gradient":
        res_h = np.tensordot(theta, batch.sobel_h, axes=1) - sobel_horizontal(batch.hr)
        res_v = np.tensordot(theta, batch.sobel_v, axes=1) - sobel_vertical(batch.hr)
        return (_contract(batch.sobel_h, np.sign(res_h)) + _contract(batch.sobel_v, np.sign(res_v))) / sr.size
    if kind == "cycle":
        residual = np.tensordot(theta, batch.down, axes=1) - batch.lr
        return _contract(batch.down, np.sign(residual)) / residual.size
    if kind in ("fft", "ssim"):
        # perturbing θ_k moves sr by ±h · stack_k
        plus = sr[None] + FD_STEP * batch.stack
        minus = sr[None] - FD_STEP * batch.stack
        up_loss = _per_image_loss(kind, plus, batch.hr[None], None, batch.scale).mean(axis=1)
        down_loss = _per_image_loss(kind, minus, batch.hr[None], None, batch.scale).mean(axis=1)
        return (up_loss - down_loss) / (2.0 * FD_STEP)
    raise ValidationError(f"unknown loss kind: {kind}")


def combined_gradient(
    theta: np.ndarray,
    weights: Sequence[float],
    enabled: Sequence[str],
    batch: PreparedBatch,
) -> np.ndarray:
    """Σ ω_i ∂L_i/∂θ"""
    if len(weights) != len(enabled):
        raise ValidationError("weights and enabled losses differ in length")
    grad = np.zeros_like(theta)
    for w, kind in zip(weights, enabled):
        if w != 0.0:
            grad += w * loss_gradient(kind, theta, batch)
    return grad


def train_epoch(
    params: RestorerParams,
    weights: Sequence[float],
    enabled: Sequence[str],
    batch: PreparedBatch,
    learning_rate: float,
    steps: int,
) -> RestorerParams:
    """`steps` plain gradient-descent updates on the combined training loss"""
    if learning_rate <= 0:
        raise ValidationError("learning_rate must be positive")
    theta = params.as_vector()
    for step in range(steps):
        grad = combined_gradient(theta, weights, enabled, batch)
        if not np.all(np.isfinite(grad)):
            raise EvaluatorError(f"non-finite gradient at step {step}", weights=weights)
        theta = theta - learning_rate * grad
    loss = combined_loss(weights, enabled, batch.predict(theta), batch.hr, batch.lr, batch.scale)
    if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
        raise EvaluatorError("training diverged", weights=weights)
    return RestorerParams.from_vector(theta, params.size)


# -- metrics --------------------------------------------------------------------

def _psnr(a: np.ndarray, b: np.ndarray, ceiling: float) -> np.ndarray:
    mse = _image_mean((a - b) ** 2)
    with np.errstate(divide="ignore"):
        value = 10.0 * np.log10(1.0 / mse)
    return np.minimum(np.where(mse > 0, value, ceiling), ceiling)


def compute_metrics(
    sr: np.ndarray,
    hr: np.ndarray,
    lr: np.ndarray,
    scale: int,
    ceiling: float = PSNR_CEILING_DB,
) -> MetricVector:
    """Metrics on restored images; sr is clamped to [0, 1] here and only here"""
    sr = np.clip(np.asarray(sr, dtype=float), 0.0, 1.0)
    hr = np.asarray(hr, dtype=float)
    _check_pair(sr, hr)
    return MetricVector(
        psnr=float(np.mean(_psnr(sr, hr, ceiling))),
        ssim=float(np.clip(np.mean(_image_mean(ssim_map(sr, hr))), -1.0, 1.0)),
        lr_psnr=float(np.mean(_psnr(downsample(sr, scale), np.asarray(lr, dtype=float), ceiling))),
        hf_proxy=float(np.mean(_image_mean(np.abs(laplacian(sr) - laplacian(hr))))),
    )


def evaluate_metrics(params: RestorerParams, validation: Sequence[ImagePair], scale: int) -> MetricVector:
    if not validation:
        raise ValidationError("validation set is empty")
    hr = np.stack([p.hr for p in validation])
    lr = np.stack([p.lr for p in validation])
    return compute_metrics(restore(params, lr, scale), hr, lr, scale)


# -- evaluator ------------------------------------------------------------------

class RestorationEvaluator:
    """Black box ω ↦ validation metrics of a restorer trained with weights ω

    In stateful mode one restorer keeps training across calls; in fresh mode each
    call starts again from the identity filter.
    """

    def __init__(self, problem: ProblemSection, enabled: Sequence[str], objectives: Sequence[str]):
        unknown = [kind for kind in enabled if kind not in LOSS_KINDS]
        if unknown:
            raise ValidationError(f"unknown loss kinds: {unknown}")
        self.problem = problem
        self.enabled = list(enabled)
        self.objectives = list(objectives)
        self.stateful = problem.mode == "stateful"
        self.dataset = synthesize_dataset(
            problem.dataset_seed, problem.image_count, problem.image_size, problem.scale
        )
        self.batch = PreparedBatch.from_pairs(self.dataset.train, problem.scale, problem.filter_size)
        self.params = RestorerParams.identity(problem.filter_size)
        self.calls = 0

    def _train(self, weights: Sequence[float]) -> RestorerParams:
        weights = [float(w) for w in weights]
        if len(weights) != len(self.enabled):
            raise EvaluatorError("weight vector length does not match enabled losses", weights=weights)
        start = self.params if self.stateful else RestorerParams.identity(self.problem.filter_size)
        params = train_epoch(
            start,
            weights,
            self.enabled,
            self.batch,
            self.problem.learning_rate,
            self.problem.steps_per_eval,
        )
        if self.stateful:
            self.params = params
        self.calls += 1
        return params

    def train_and_eval(self, weights: Sequence[float]) -> np.ndarray:
        start = time.perf_counter()
        params = self._train(weights)
        metrics = evaluate_metrics(params, self.dataset.validation, self.problem.scale)
        logger.debug(
            "restorer evaluated",
            call=self.calls,
            metrics=metrics.model_dump(),
            seconds=time.perf_counter() - start,
        )
        return np.array(metrics.select(self.objectives))

    def replay(self, weights: Sequence[float]) -> None:
        """Re-drive training without evaluation, to rebuild state on resume"""
        if self.stateful:
            self._train(weights)
