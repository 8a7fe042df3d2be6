"""Procedural synthetic audiovisual corpus with known ground truth.

The renderer draws a schematic face whose mouth opening is an exact, invertible
function of the audio amplitude envelope, and whose non-mouth attributes
(eyebrow angle, mouth-corner curvature, cheek tint) are a deterministic visual
signature of the emotion category. This makes lip-sync and emotion rendering
independently verifiable at desk scale.

Each attribute is an affine program of the per-frame envelope,
``value(env) = base + gain * env``, so the signature is a per-emotion dynamic,
not a per-clip constant. A window sampled elsewhere in the clip (the training
reference) sees the program at other envelope values and therefore does not
reveal the target window's attribute values; the emotion label plus the audio
does. That keeps desk-scale training honest about label conditioning: copying
reference appearance cannot satisfy reconstruction, the way copying a static
signature could.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..emotions import EMOTIONS, EmotionLabel
from .records import ClipRecord, CorpusSpec, CorpusError


@dataclass(frozen=True)
class EmotionAttributes:
    """Visual signature program of one emotion.

    Every scalar attribute is evaluated as ``base + gain * env`` with the
    per-frame amplitude envelope ``env`` in [0, 1]; angles in degrees, offsets
    as image fractions. The base fields alone are a distinct static signature
    per emotion; the gains make the signature envelope-dynamic.
    """

    brow_angle_deg: float      # >0 tilts the outer brow end up
    brow_raise_frac: float     # vertical brow offset, >0 raises
    corner_curl: float         # -1..1, >0 curls mouth corners up
    cheek_tint: tuple[float, float, float]
    tint_alpha: float
    brow_angle_gain: float = 0.0
    brow_raise_gain: float = 0.0
    corner_curl_gain: float = 0.0
    tint_alpha_gain: float = 0.0

    def at(self, env: float) -> "EmotionAttributes":
        """Resolve the program at one envelope value (gains folded in, zeroed)."""
        e = min(max(float(env), 0.0), 1.0)
        return EmotionAttributes(
            brow_angle_deg=self.brow_angle_deg + self.brow_angle_gain * e,
            brow_raise_frac=self.brow_raise_frac + self.brow_raise_gain * e,
            corner_curl=self.corner_curl + self.corner_curl_gain * e,
            cheek_tint=self.cheek_tint,
            tint_alpha=self.tint_alpha + self.tint_alpha_gain * e,
        )


# Distinct deterministic signature program per emotion (indexable by category
# name). Bases and gains are chosen so that at any single envelope value the
# six resolved signatures stay mutually distinct (the tint colors already are),
# while each non-neutral emotion's attributes visibly track the envelope.
EMOTION_ATTRIBUTES: dict[str, EmotionAttributes] = {
    "anger":     EmotionAttributes(-18.0, -0.004, -0.20, (0.85, 0.15, 0.10), 0.22,
                                   -20.0, -0.012, -0.50, 0.36),
    "disgust":   EmotionAttributes(-6.0,   0.004, -0.95, (0.25, 0.70, 0.20), 0.22,
                                   -8.0,  -0.008, +0.30, 0.36),
    "fear":      EmotionAttributes(+14.0,  0.016, -0.05, (0.55, 0.35, 0.80), 0.22,
                                   +20.0, +0.028, -0.30, 0.36),
    "happiness": EmotionAttributes(+16.0,  0.008, +0.55, (0.95, 0.45, 0.55), 0.22,
                                   -8.0,  +0.008, +0.45, 0.36),
    "neutral":   EmotionAttributes(0.0,    0.000,  0.00, (0.00, 0.00, 0.00), 0.00),
    "sadness":   EmotionAttributes(-24.0,  0.026, -0.60, (0.25, 0.40, 0.85), 0.22,
                                   +12.0, -0.008, -0.40, 0.36),
}

_MOUTH_DARK = np.array([0.12, 0.05, 0.06], dtype=np.float32)
_EYE_DARK = np.array([0.08, 0.06, 0.05], dtype=np.float32)
_BROW_DARK = np.array([0.15, 0.10, 0.08], dtype=np.float32)
_DECODE_LUMA_THRESHOLD = 0.30


@dataclass
class FaceGeometry:
    """Per-clip face layout. All coordinates in pixels of an image_size canvas."""

    image_size: int
    cx: float
    cy: float
    head_rx: float
    head_ry: float
    skin: np.ndarray
    background: np.ndarray
    eye_dx: float
    eye_y: float
    eye_r: float
    brow_y: float
    brow_half_len: float
    mouth_y: float
    mouth_half_width: float
    max_aperture_px: int
    corner_r: float
    cheek_dx: float
    cheek_y: float
    cheek_r: float


def sample_geometry(rng: np.random.Generator, spec: CorpusSpec) -> FaceGeometry:
    s = spec.image_size
    rx = rng.uniform(*spec.head_rx_range) * s
    ry = rng.uniform(*spec.head_ry_range) * s
    skin = np.array([rng.uniform(0.70, 0.90),
                     rng.uniform(0.55, 0.75),
                     rng.uniform(0.45, 0.65)], dtype=np.float32)
    background = np.asarray(rng.uniform(0.35, 0.65, size=3), dtype=np.float32)
    return FaceGeometry(
        image_size=s,
        # integer pixel centers so the mouth raster (and its decode) is exact
        cx=float(round(s * 0.5)),
        cy=s * 0.52,
        head_rx=rx,
        head_ry=ry,
        skin=skin,
        background=background,
        eye_dx=0.13 * s,
        eye_y=s * 0.52 - 0.11 * s,
        eye_r=0.035 * s,
        brow_y=s * 0.52 - 0.17 * s,
        brow_half_len=0.065 * s,
        mouth_y=float(round(s * 0.52 + 0.18 * s)),
        mouth_half_width=0.11 * s,
        max_aperture_px=max(1, int(round(spec.max_aperture_frac * s))),
        corner_r=0.02 * s,
        cheek_dx=0.19 * s,
        cheek_y=s * 0.52 + 0.05 * s,
        cheek_r=0.075 * s,
    )


def frame_envelope(audio: np.ndarray, sample_rate: int, fps: float) -> np.ndarray:
    """Short-time amplitude envelope: peak |x| over each video-frame-aligned window.

    This is the project's envelope oracle; the synthetic renderer drives the
    mouth aperture from exactly this quantity.
    """
    audio = np.asarray(audio)
    if audio.size == 0:
        raise CorpusError("cannot compute the envelope of empty audio")
    spf = sample_rate / fps
    n_frames = int(np.ceil(audio.shape[0] / spf))
    env = np.zeros(n_frames, dtype=np.float32)
    for i in range(n_frames):
        lo = int(round(i * spf))
        hi = min(int(round((i + 1) * spf)), audio.shape[0])
        if hi > lo:
            env[i] = np.abs(audio[lo:hi]).max()
    return env


def aperture_from_envelope(envelope: np.ndarray, max_aperture_px: int) -> np.ndarray:
    """Fixed monotone map from envelope values in [0, 1] to integer mouth half-heights."""
    return np.rint(np.clip(envelope, 0.0, 1.0) * max_aperture_px).astype(np.int64)


def _grid(size: int):
    ys, xs = np.mgrid[0:size, 0:size]
    return xs.astype(np.float32), ys.astype(np.float32)


def _paint(img: np.ndarray, mask: np.ndarray, color: np.ndarray, alpha: float = 1.0):
    if alpha >= 1.0:
        img[mask] = color
    else:
        img[mask] = (1.0 - alpha) * img[mask] + alpha * color


def _brow_mask(xs, ys, cx_b, cy_b, half_len, angle_deg, thickness=1.3):
    # distance from each pixel to the brow's centre segment
    th = np.deg2rad(angle_deg)
    dx, dy = np.cos(th), -np.sin(th)   # image y grows downward
    px, py = xs - cx_b, ys - cy_b
    t = np.clip(px * dx + py * dy, -half_len, half_len)
    qx, qy = px - t * dx, py - t * dy
    return qx * qx + qy * qy <= thickness * thickness


def render_frame(geom: FaceGeometry, emotion: EmotionLabel, aperture_px: int,
                 jitter: tuple[int, int] = (0, 0), env: float | None = None) -> np.ndarray:
    """Draw one face frame; returns float32 (H, W, 3) in [0, 1].

    `jitter` shifts the whole face by integer pixels, so the mouth rasterization
    (and therefore `decode_aperture`) is exact for every pose. `env` is the
    frame's amplitude envelope driving the attribute programs; when omitted it
    is inferred from the aperture (its quantized image of the envelope).
    """
    if env is None:
        env = aperture_px / max(geom.max_aperture_px, 1)
    attrs = EMOTION_ATTRIBUTES[emotion.category].at(env)
    s = geom.image_size
    jx, jy = jitter
    cx, cy = geom.cx + jx, geom.cy + jy
    xs, ys = _grid(s)

    img = np.empty((s, s, 3), dtype=np.float32)
    img[:] = geom.background

    head = ((xs - cx) / geom.head_rx) ** 2 + ((ys - cy) / geom.head_ry) ** 2 <= 1.0
    _paint(img, head, geom.skin)

    if attrs.tint_alpha > 0.0:
        tint = np.asarray(attrs.cheek_tint, dtype=np.float32)
        for side in (-1.0, 1.0):
            cheek = ((xs - (cx + side * geom.cheek_dx)) ** 2
                     + (ys - (geom.cheek_y + jy)) ** 2) <= geom.cheek_r ** 2
            _paint(img, cheek & head, tint, attrs.tint_alpha)

    eye_y = geom.eye_y + jy
    for side in (-1.0, 1.0):
        eye = ((xs - (cx + side * geom.eye_dx)) ** 2 + (ys - eye_y) ** 2) <= geom.eye_r ** 2
        _paint(img, eye, _EYE_DARK)

    brow_y = geom.brow_y + jy - attrs.brow_raise_frac * s
    for side in (-1.0, 1.0):
        # mirror the angle so both brows tilt symmetrically (outer end referenced)
        mask = _brow_mask(xs, ys, cx + side * geom.eye_dx, brow_y,
                          geom.brow_half_len, side * attrs.brow_angle_deg)
        _paint(img, mask, _BROW_DARK)

    mouth_y = geom.mouth_y + jy
    mw = geom.mouth_half_width
    if aperture_px > 0:
        mouth = (((xs - cx) / mw) ** 2 + ((ys - mouth_y) / aperture_px) ** 2) <= 1.0
    else:
        mouth = (np.abs(ys - mouth_y) < 0.5) & (np.abs(xs - cx) <= mw)
    _paint(img, mouth, _MOUTH_DARK)

    curl_px = attrs.corner_curl * 0.035 * s
    for side in (-1.0, 1.0):
        corner = ((xs - (cx + side * mw)) ** 2
                  + (ys - (mouth_y - curl_px)) ** 2) <= geom.corner_r ** 2
        _paint(img, corner, _MOUTH_DARK)

    return np.clip(img, 0.0, 1.0)


def attribute_region_mask(geom: FaceGeometry, jitter: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Boolean (H, W) mask of every pixel any emotion's attributes may touch.

    Declared geometrically from the attribute table's ranges (brow strokes at any
    tabled angle/raise, corner marks at any tabled curl, cheek discs), so tests can
    assert that switching emotion changes pixels only inside this region.
    """
    s = geom.image_size
    jx, jy = jitter
    cx = geom.cx + jx
    xs, ys = _grid(s)
    mask = np.zeros((s, s), dtype=bool)

    # attribute programs are affine in env, so their extremes sit at env 0 or 1
    endpoints = [a.at(e) for a in EMOTION_ATTRIBUTES.values() for e in (0.0, 1.0)]
    raises = [a.brow_raise_frac * s for a in endpoints]
    angles = [abs(a.brow_angle_deg) for a in endpoints]
    max_drop = geom.brow_half_len * np.sin(np.deg2rad(max(angles))) + 2.5
    for side in (-1.0, 1.0):
        bx = cx + side * geom.eye_dx
        y_lo = geom.brow_y + jy - max(raises) - max_drop
        y_hi = geom.brow_y + jy - min(raises) + max_drop
        x_lo, x_hi = bx - geom.brow_half_len - 2.5, bx + geom.brow_half_len + 2.5
        mask |= (xs >= x_lo) & (xs <= x_hi) & (ys >= y_lo) & (ys <= y_hi)

    curls = [abs(a.corner_curl) * 0.035 * s for a in endpoints]
    span = max(curls) + geom.corner_r + 1.5
    mouth_y = geom.mouth_y + jy
    for side in (-1.0, 1.0):
        mx = cx + side * geom.mouth_half_width
        mask |= ((xs >= mx - geom.corner_r - 1.5) & (xs <= mx + geom.corner_r + 1.5)
                 & (ys >= mouth_y - span) & (ys <= mouth_y + span))

    for side in (-1.0, 1.0):
        cheek = ((xs - (cx + side * geom.cheek_dx)) ** 2
                 + (ys - (geom.cheek_y + jy)) ** 2) <= (geom.cheek_r + 1.0) ** 2
        mask |= cheek

    return mask


def decode_aperture(frame: np.ndarray, geom: FaceGeometry,
                    jitter: tuple[int, int] = (0, 0)) -> int:
    """Renderer inverse: recover the mouth half-height (px) from a rendered frame."""
    jx, jy = jitter
    col = int(round(geom.cx)) + jx
    my = int(round(geom.mouth_y)) + jy
    lo = max(my - geom.max_aperture_px - 2, 0)
    hi = min(my + geom.max_aperture_px + 3, frame.shape[0])
    strip = frame[lo:hi, col, :].astype(np.float32)
    if frame.dtype == np.uint8:
        strip /= 255.0
    luma = strip @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    dark = int((luma < _DECODE_LUMA_THRESHOLD).sum())
    return max(0, (dark - 1) // 2)


def _pose_jitter(rng: np.random.Generator, n_frames: int, max_px: float) -> np.ndarray:
    """Integer random-walk pose jitter, clipped to +-max_px."""
    steps = rng.integers(-1, 2, size=(n_frames, 2))
    path = np.cumsum(steps, axis=0)
    lim = int(max_px)
    return np.clip(path, -lim, lim)


def _driver(rng: np.random.Generator, n_frames: int, fps: float) -> np.ndarray:
    """Speech-like per-frame aperture driver in [0, 1]: two seeded sinusoids, clipped."""
    t = np.arange(n_frames, dtype=np.float64) / fps
    f1 = rng.uniform(2.0, 4.0)
    f2 = rng.uniform(5.0, 8.0)
    p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
    raw = 0.5 + 0.35 * np.sin(2 * np.pi * f1 * t + p1) + 0.3 * np.sin(2 * np.pi * f2 * t + p2)
    return np.clip(raw, 0.0, 1.0).astype(np.float32)


def synth_audio(rng: np.random.Generator, driver: np.ndarray, spec: CorpusSpec,
                f0: float) -> np.ndarray:
    """Amplitude-modulated voiced noise whose per-frame peak envelope equals `driver`.

    The carrier (square-wave buzz plus white noise) is normalized to unit peak
    within each frame window, so frame_envelope(audio) == driver exactly.
    """
    spf = spec.samples_per_frame
    n = driver.shape[0] * spf
    t = np.arange(n, dtype=np.float64) / spec.sample_rate
    carrier = 0.7 * np.sign(np.sin(2 * np.pi * f0 * t)) + 0.3 * rng.standard_normal(n)
    carrier = carrier.reshape(driver.shape[0], spf).astype(np.float32)
    peaks = np.abs(carrier).max(axis=1, keepdims=True)
    carrier /= np.maximum(peaks, 1e-12)
    audio = carrier * driver[:, None]
    return audio.reshape(-1)


def render_clip(spec: CorpusSpec, clip_index: int, emotion: EmotionLabel,
                clip_seed) -> ClipRecord:
    """Render one clip deterministically from its seed; emotion never consumes RNG."""
    rng = np.random.Generator(np.random.PCG64(clip_seed))
    geom = sample_geometry(rng, spec)
    n_frames = spec.frames_per_clip
    jitter = _pose_jitter(rng, n_frames, spec.pose_jitter_px)
    driver = _driver(rng, n_frames, spec.fps)
    f0 = rng.uniform(100.0, 250.0)
    audio = synth_audio(rng, driver, spec, f0)

    env = frame_envelope(audio, spec.sample_rate, spec.fps)
    apertures = aperture_from_envelope(env, geom.max_aperture_px)

    frames = np.empty((n_frames, spec.image_size, spec.image_size, 3), dtype=np.uint8)
    for i in range(n_frames):
        f = render_frame(geom, emotion, int(apertures[i]), tuple(jitter[i]),
                         env=float(env[i]))
        frames[i] = ClipRecord.quantize(f)

    return ClipRecord(
        clip_id=f"synth{clip_index:05d}",
        frames_u8=frames,
        fps=spec.fps,
        audio=audio.astype(np.float32),
        sample_rate=spec.sample_rate,
        emotion=emotion,
        subject_id=f"subj{clip_index:05d}",
    )


def clip_geometry(spec: CorpusSpec, clip_seed) -> tuple[FaceGeometry, np.ndarray]:
    """Re-derive a clip's geometry and pose-jitter path from its seed (for oracles)."""
    rng = np.random.Generator(np.random.PCG64(clip_seed))
    geom = sample_geometry(rng, spec)
    jitter = _pose_jitter(rng, spec.frames_per_clip, spec.pose_jitter_px)
    return geom, jitter


def clip_seed_for(spec: CorpusSpec, clip_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=spec.seed, spawn_key=(clip_index,))


def synth_generate(spec: CorpusSpec) -> list[ClipRecord]:
    """Generate the full synthetic corpus; identical spec+seed gives a bit-identical result."""
    master = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    weights = np.asarray(spec.emotion_distribution, dtype=np.float64)
    probs = weights / weights.sum()
    if spec.exact_balance:
        # largest-remainder allocation of the declared proportions, then shuffled
        quota = probs * spec.n_clips
        counts = np.floor(quota).astype(int)
        remainder = spec.n_clips - counts.sum()
        order = np.argsort(-(quota - counts))
        counts[order[:remainder]] += 1
        emotion_indices = np.repeat(np.arange(len(EMOTIONS)), counts)
        emotion_indices = master.permutation(emotion_indices)
    else:
        emotion_indices = master.choice(len(EMOTIONS), size=spec.n_clips, p=probs)

    clips = []
    for i in range(spec.n_clips):
        emotion = EmotionLabel.from_index(int(emotion_indices[i]))
        clips.append(render_clip(spec, i, emotion, clip_seed_for(spec, i)))
    return clips
