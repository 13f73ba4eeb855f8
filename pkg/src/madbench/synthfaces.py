"""Deterministic parametric face generator.

Renders face-like images with analytically known 68-point landmarks
(standard iBUG layout: 17 jaw, 10 brows, 9 nose, 12 eyes, 20 mouth).
Geometry is defined in a canonical enrolment frame and scaled to the
requested capture resolution; landmarks are exact by construction, so
downstream warping tests can rely on them with zero detector error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import AGE_BANDS, ETHNICITIES, GENDERS, PARTNERS
from .seeds import rng_for

# Canonical enrolment frame; all FaceParams pixel values refer to it.
CANON_W, CANON_H = 512, 683
CANON_CENTER_Y_FRAC = 0.46

ENROL_SIZE = (512, 683)
GATE_SIZE = (400, 533)
MIN_ENROL_SIZE = (362, 482)
MIN_GATE_SIZE = (381, 508)

ENROLMENTS_PER_SUBJECT = 2
GATES_PER_SUBJECT = 10


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class FaceParams:
    """Per-subject appearance vector (canonical-frame pixels / fractions)."""

    head_axes: tuple[float, float]  # ellipse half-axes (px)
    eye_spacing: float              # px, in [0.30, 0.45] * head width
    eye_offset: float               # fraction of head half-height above center
    nose_offset: float              # fraction below center (nose base)
    mouth_offset: float             # fraction below center (mouth center)
    skin_rgb: tuple[float, float, float]
    texture_seed: int
    marks: tuple[tuple[float, float, float, float], ...] = ()  # (fx, fy, radius_px, darkness)
    eye_size: float = 38.0          # eye width (px)
    iris_rgb: tuple[float, float, float] = (0.25, 0.18, 0.12)
    brow_offset: float = 0.11       # fraction of half-height above eye line
    brow_thickness: float = 4.0
    nose_width: float = 46.0
    mouth_width: float = 88.0
    mouth_height: float = 26.0
    lip_rgb: tuple[float, float, float] = (0.62, 0.33, 0.30)
    texture_amp: float = 0.03

    def validate(self) -> None:
        head_w = 2.0 * self.head_axes[0]
        if not (0.30 * head_w <= self.eye_spacing <= 0.45 * head_w):
            raise RenderError(
                f"eye spacing {self.eye_spacing:.1f} outside [0.30, 0.45] x head width {head_w:.1f}"
            )
        for off in (self.eye_offset, self.nose_offset, self.mouth_offset):
            if not (0.0 < off < 1.0):
                raise RenderError("feature offsets must keep features inside the head ellipse")

    def vector(self) -> np.ndarray:
        """Comparable parameter vector for lookalike pairing."""
        return np.array(
            [
                self.head_axes[0],
                self.head_axes[1],
                self.eye_spacing,
                self.eye_offset * 200.0,
                self.nose_offset * 200.0,
                self.mouth_offset * 200.0,
                self.skin_rgb[0] * 255.0,
                self.skin_rgb[1] * 255.0,
                self.skin_rgb[2] * 255.0,
                self.eye_size,
                self.nose_width,
                self.mouth_width,
                self.mouth_height,
                self.iris_rgb[0] * 120.0,
                self.lip_rgb[0] * 120.0,
            ]
        )


@dataclass(frozen=True)
class CaptureSpec:
    """One acquisition condition (studio enrolment or ABC-gate capture)."""

    kind: str  # enrolment | gate
    width: int
    height: int
    max_rotation_deg: float = 0.0
    max_translation_px: float = 0.0
    illumination_gain: float = 1.0
    illumination_bias: float = 0.0
    noise_sigma: float = 2.0 / 255.0
    background: str = "uniform"  # uniform | gradient | scene

    def validate(self) -> None:
        if self.kind not in ("enrolment", "gate"):
            raise RenderError(f"bad capture kind {self.kind!r}")
        jitter = max(self.max_rotation_deg, self.max_translation_px)
        if self.kind == "enrolment" and jitter != 0.0:
            raise RenderError("enrolment captures are studio-still: jitter must be 0")
        if self.kind == "gate" and jitter <= 0.0:
            raise RenderError("gate captures must carry pose jitter")
        min_w, min_h = MIN_ENROL_SIZE if self.kind == "enrolment" else MIN_GATE_SIZE
        if self.width < min_w or self.height < min_h:
            raise RenderError(
                f"{self.kind} resolution {self.width}x{self.height} below minimum {min_w}x{min_h}"
            )
        if self.background not in ("uniform", "gradient", "scene"):
            raise RenderError(f"bad background {self.background!r}")


ENROL_SPEC = CaptureSpec(kind="enrolment", width=ENROL_SIZE[0], height=ENROL_SIZE[1])

# Gate presets per collection site; differences model the three physical
# ABC set-ups only at the level of capture parameters.
GATE_SPECS = {
    "HDA": CaptureSpec("gate", *GATE_SIZE, 3.0, 6.0, 0.97, -0.01, 3.5 / 255.0, "gradient"),
    "NTN": CaptureSpec("gate", *GATE_SIZE, 5.0, 10.0, 1.05, 0.0, 4.0 / 255.0, "scene"),
    "UTW": CaptureSpec("gate", *GATE_SIZE, 4.0, 8.0, 0.92, 0.02, 5.0 / 255.0, "scene"),
}


# --- landmark layout -------------------------------------------------------


def _landmark_layout(face: FaceParams) -> np.ndarray:
    """68 landmarks in the canonical frame, mirror-symmetric about the
    vertical face axis for symmetric parameters."""
    cx = CANON_W / 2.0
    cy = CANON_H * CANON_CENTER_Y_FRAC
    ax, ay = face.head_axes
    pts = np.zeros((68, 2), dtype=float)

    # jaw 0-16: lower semi-ellipse, left ear to right ear through the chin
    for i in range(17):
        theta = math.pi * (1.0 - i / 16.0)
        pts[i] = (cx + ax * math.cos(theta), cy + ay * math.sin(theta))

    ecy = cy - face.eye_offset * ay
    ex_r = cx - face.eye_spacing / 2.0
    ex_l = cx + face.eye_spacing / 2.0
    w = face.eye_size
    h = face.eye_size * 0.40

    # brows 17-26: arched rows above each eye
    bw = face.eye_size * 0.78
    bey = ecy - face.brow_offset * ay
    arch = 0.16 * face.eye_size
    xs = np.array([-1.0, -0.5, 0.0, 0.5, 1.0]) * bw
    lift = np.array([0.0, 0.6, 1.0, 0.6, 0.0]) * arch
    for j in range(5):
        pts[17 + j] = (ex_r + xs[j], bey - lift[j])
        pts[22 + j] = (ex_l + xs[j], bey - lift[4 - j])

    # nose 27-35: bridge plus nostril row
    nb_y = cy + face.nose_offset * ay
    for j, f in enumerate((0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)):
        pts[27 + j] = (cx, ecy + (nb_y - ecy) * f)
    nostril_y = nb_y + 0.035 * ay
    for j, f in enumerate((-0.5, -0.25, 0.0, 0.25, 0.5)):
        pts[31 + j] = (cx + face.nose_width * f, nostril_y)

    # eyes 36-47: six points each, corners on the eye line
    for base, ex in ((36, ex_r), (42, ex_l)):
        pts[base + 0] = (ex - w / 2.0, ecy)
        pts[base + 1] = (ex - w / 6.0, ecy - h / 2.0)
        pts[base + 2] = (ex + w / 6.0, ecy - h / 2.0)
        pts[base + 3] = (ex + w / 2.0, ecy)
        pts[base + 4] = (ex + w / 6.0, ecy + h / 2.0)
        pts[base + 5] = (ex - w / 6.0, ecy + h / 2.0)

    # mouth 48-67: outer ring of 12, inner ring of 8
    my = cy + face.mouth_offset * ay
    rx, ry = face.mouth_width / 2.0, face.mouth_height / 2.0
    outer = (180, 150, 120, 90, 60, 30, 0, 330, 300, 270, 240, 210)
    for j, deg in enumerate(outer):
        t = math.radians(deg)
        pts[48 + j] = (cx + rx * math.cos(t), my - ry * math.sin(t))
    inner = (180, 135, 90, 45, 0, 315, 270, 225)
    for j, deg in enumerate(inner):
        t = math.radians(deg)
        pts[60 + j] = (cx + rx * 0.72 * math.cos(t), my - ry * 0.50 * math.sin(t))
    return pts


@dataclass(frozen=True)
class Similarity:
    """Rotation + uniform scale + translation, y-down screen coordinates."""

    scale: float = 1.0
    angle_deg: float = 0.0
    pivot: tuple[float, float] = (0.0, 0.0)
    target: tuple[float, float] = (0.0, 0.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        t = math.radians(self.angle_deg)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = (p - self.pivot) @ (self.scale * rot).T + self.target
        return out if np.ndim(points) > 1 else out[0]


# --- raster primitives ------------------------------------------------------


def _fill_ellipse(img, center, axes, angle_deg, color, opacity=1.0, feather=1.0):
    """Anti-aliased rotated-ellipse fill, blended over the canvas in place."""
    h_img, w_img = img.shape[:2]
    a, b = max(axes[0], 1e-6), max(axes[1], 1e-6)
    r_max = max(a, b) + feather + 1.0
    x0 = max(int(center[0] - r_max), 0)
    x1 = min(int(center[0] + r_max) + 2, w_img)
    y0 = max(int(center[1] - r_max), 0)
    y1 = min(int(center[1] + r_max) + 2, h_img)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs - center[0]
    dy = ys - center[1]
    t = math.radians(angle_deg)
    u = dx * math.cos(t) + dy * math.sin(t)
    v = -dx * math.sin(t) + dy * math.cos(t)
    r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    alpha = np.clip((1.0 - r) * (min(a, b) / max(feather, 1e-3)), 0.0, 1.0) * opacity
    region = img[y0:y1, x0:x1]
    region += alpha[..., None] * (np.asarray(color, dtype=float) - region)


def _smooth_noise(rng: np.random.Generator, shape, cells: int) -> np.ndarray:
    """Band-limited noise: coarse grid bilinearly upsampled to shape."""
    h, w = shape
    grid = rng.standard_normal((cells, cells))
    yi = np.linspace(0, cells - 1, h)
    xi = np.linspace(0, cells - 1. , w)
    y0 = np.clip(yi.astype(int), 0, cells - 2)
    x0 = np.clip(xi.astype(int), 0, cells - 2)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def _background(rng, spec: CaptureSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    img = np.empty((h, w, 3), dtype=float)
    if spec.background == "uniform":
        img[:] = (0.82, 0.84, 0.86)
    elif spec.background == "gradient":
        ramp = np.linspace(0.88, 0.62, h)[:, None]
        img[:] = ramp[..., None] * np.array([0.9, 0.92, 0.96])
    else:  # scene: smooth colored blobs
        base = np.array([0.55, 0.58, 0.60])
        for c in range(3):
            img[..., c] = base[c] + 0.16 * _smooth_noise(rng, (h, w), 7)
        img = np.clip(img, 0.0, 1.0)
    return img


def render(
    face: FaceParams, spec: CaptureSpec, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Render one capture. Returns (uint8 RGB image, 68x2 landmarks).

    Pose jitter and sensor noise are drawn from ``seed``; geometry is
    independent of the photometric settings.
    """
    spec.validate()
    face.validate()
    rng = rng_for(seed, "render")

    scale = min(spec.width / CANON_W, spec.height / CANON_H)
    rot = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) if spec.max_rotation_deg else 0.0
    tx = rng.uniform(-spec.max_translation_px, spec.max_translation_px) if spec.max_translation_px else 0.0
    ty = rng.uniform(-spec.max_translation_px, spec.max_translation_px) if spec.max_translation_px else 0.0
    pivot = (CANON_W / 2.0, CANON_H * CANON_CENTER_Y_FRAC)
    target = (spec.width / 2.0 + tx, spec.height * CANON_CENTER_Y_FRAC + ty)
    tf = Similarity(scale=scale, angle_deg=rot, pivot=pivot, target=target)

    landmarks = tf.apply(_landmark_layout(face))

    img = _background(rng, spec)
    cxy = tf.apply(np.array(pivot))
    ax, ay = face.head_axes[0] * scale, face.head_axes[1] * scale
    skin = np.asarray(face.skin_rgb, dtype=float)

    _fill_ellipse(img, cxy, (ax, ay), rot, skin, feather=2.0)

    # head mask for shading / texture, slightly inset to keep the rim clean
    h_img, w_img = img.shape[:2]
    ys, xs = np.mgrid[0:h_img, 0:w_img]
    t = math.radians(rot)
    dx = xs - cxy[0]
    dy = ys - cxy[1]
    u = dx * math.cos(t) + dy * math.sin(t)
    v = -dx * math.sin(t) + dy * math.cos(t)
    rr = (u / (ax - 1.5)) ** 2 + (v / (ay - 1.5)) ** 2
    head = rr <= 1.0

    # lateral + vertical shading for a weak 3D impression
    shade = 1.0 - 0.10 * np.clip(rr, 0.0, 1.0) - 0.05 * np.clip(v / max(ay, 1.0), 0.0, 1.0)
    img[head] *= shade[head][:, None]

    # per-identity skin texture (two spatial scales)
    trng = rng_for(face.texture_seed, "skin")
    tex = (
        0.65 * _smooth_noise(trng, (h_img, w_img), 12)
        + 0.35 * _smooth_noise(trng, (h_img, w_img), 40)
    )
    img[head] *= (1.0 + face.texture_amp * tex[head])[:, None]

    def at(idx: int) -> np.ndarray:
        return landmarks[idx]

    # brows
    brow_color = skin * 0.32
    for base in (17, 22):
        for j in range(5):
            _fill_ellipse(
                img, at(base + j), (face.brow_thickness * scale * 1.6, face.brow_thickness * scale),
                rot, brow_color, feather=1.2,
            )

    # eyes: sclera, iris, pupil
    iris_r = face.eye_size * 0.19 * scale
    for base in (36, 42):
        center = landmarks[base:base + 6].mean(axis=0)
        _fill_ellipse(img, center, (face.eye_size * 0.5 * scale, face.eye_size * 0.22 * scale),
                      rot, (0.93, 0.93, 0.92), feather=1.0)
        _fill_ellipse(img, center, (iris_r, iris_r), rot, face.iris_rgb, feather=0.8)
        _fill_ellipse(img, center, (iris_r * 0.45, iris_r * 0.45), rot, (0.05, 0.05, 0.05), feather=0.6)

    # nose: bridge shading line, tip highlight, nostrils
    bridge_color = skin * 0.82
    for j in range(27, 31):
        _fill_ellipse(img, at(j), (3.2 * scale, 6.0 * scale), rot, bridge_color, opacity=0.5, feather=2.0)
    _fill_ellipse(img, at(30), (6.5 * scale, 4.5 * scale), rot, np.clip(skin * 1.12, 0, 1), opacity=0.6, feather=2.0)
    for j in (31, 35):
        _fill_ellipse(img, at(j), (3.0 * scale, 2.2 * scale), rot, skin * 0.35, feather=0.8)

    # mouth: lip band plus darker inner separation
    mouth_center = (at(48) + at(54)) / 2.0
    _fill_ellipse(img, mouth_center, (face.mouth_width / 2.0 * scale, face.mouth_height / 2.0 * scale),
                  rot, face.lip_rgb, feather=1.5)
    _fill_ellipse(img, mouth_center, (face.mouth_width / 2.0 * 0.92 * scale, face.mouth_height * 0.12 * scale),
                  rot, np.asarray(face.lip_rgb) * 0.55, feather=1.2)

    # trait marks (moles / freckle clusters), positions in head-frame fractions
    for fx, fy, radius, darkness in face.marks:
        pos = tf.apply(np.array([pivot[0] + fx * face.head_axes[0], pivot[1] + fy * face.head_axes[1]]))
        _fill_ellipse(img, pos, (radius * scale, radius * scale), rot, skin * (1.0 - darkness), feather=0.7)

    img = img * spec.illumination_gain + spec.illumination_bias
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)

    if (landmarks < 0).any() or (landmarks[:, 0] > spec.width - 1).any() or (
        landmarks[:, 1] > spec.height - 1
    ).any():
        raise RenderError("landmarks fall outside the image after pose jitter")

    return (np.rint(img * 255.0)).astype(np.uint8), landmarks


# --- population sampling ----------------------------------------------------


@dataclass(frozen=True)
class Demographics:
    """Marginal counts: gender, age bands, ethnicities (each sums to total)."""

    males: int = 86
    females: int = 64
    ages: tuple[int, int, int] = (87, 47, 16)
    ethnicities: tuple[int, int, int, int, int] = (96, 26, 10, 9, 9)

    @property
    def total(self) -> int:
        return self.males + self.females

    def validate(self) -> None:
        counts = (self.males, self.females, *self.ages, *self.ethnicities)
        if any(c < 0 for c in counts):
            raise ValueError("demographic counts must be nonnegative")
        if self.total == 0:
            raise ValueError("demographics sum to zero")
        if sum(self.ages) != self.total or sum(self.ethnicities) != self.total:
            raise ValueError("age and ethnicity marginals must sum to the gender total")

    def scaled(self, factor: float) -> "Demographics":
        """Scale all marginals; gender cells round to the nearest even value
        so the population always pairs fully."""
        males = int(round(self.males * factor / 2.0)) * 2
        females = int(round(self.females * factor / 2.0)) * 2
        total = males + females
        ages = _apportion([a * factor for a in self.ages], total)
        eths = _apportion([e * factor for e in self.ethnicities], total)
        return Demographics(males, females, tuple(ages), tuple(eths))


def _apportion(weights, total: int) -> list[int]:
    """Largest-remainder apportionment of ``total`` over ``weights``."""
    wsum = float(sum(weights))
    if wsum <= 0:
        out = [0] * len(weights)
        if out:
            out[0] = total
        return out
    raw = [w / wsum * total for w in weights]
    out = [int(math.floor(r)) for r in raw]
    rem = total - sum(out)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - out[i]), i))
    for i in order[:rem]:
        out[i] += 1
    return out


def _gender_ethnicity_cells(dem: Demographics) -> dict[tuple[str, str], int]:
    """Joint gender x ethnicity cell sizes honoring both marginals.

    Parity is arranged so odd-sized ethnicities put their odd half in the
    male column, keeping tier-relaxed pairing able to pair everyone.
    """
    male_parts = _apportion(dem.ethnicities, dem.males) if dem.total else []
    if dem.males and dem.females:
        # fix parities: even ethnicity -> even male part, odd ethnicity -> odd male part
        needs_flip = []
        for i, n_e in enumerate(dem.ethnicities):
            want_odd = n_e % 2 == 1
            if (male_parts[i] % 2 == 1) != want_odd:
                needs_flip.append(i)
        for k in range(0, len(needs_flip) - 1, 2):
            i, j = needs_flip[k], needs_flip[k + 1]
            if male_parts[i] < dem.ethnicities[i] and male_parts[j] > 0:
                male_parts[i] += 1
                male_parts[j] -= 1
            else:
                male_parts[i] -= 1
                male_parts[j] += 1
    cells: dict[tuple[str, str], int] = {}
    for i, eth in enumerate(ETHNICITIES):
        cells[("male", eth)] = male_parts[i] if dem.males else 0
        cells[("female", eth)] = dem.ethnicities[i] - cells[("male", eth)]
    return cells


# Disjoint per-ethnicity appearance ranges; keeps lookalike pairing
# within an ethnicity meaningful.
_ETHNICITY_STYLE = {
    "European": {"light": (0.74, 0.84), "tint": (1.00, 0.92, 0.86), "nose_w": (40.0, 46.0)},
    "African": {"light": (0.34, 0.46), "tint": (1.00, 0.84, 0.72), "nose_w": (52.0, 60.0)},
    "IndianAsian": {"light": (0.52, 0.62), "tint": (1.00, 0.88, 0.76), "nose_w": (46.0, 52.0)},
    "EastAsian": {"light": (0.64, 0.72), "tint": (1.00, 0.94, 0.84), "nose_w": (36.0, 40.0)},
    "MiddleEastern": {"light": (0.48, 0.51), "tint": (1.00, 0.90, 0.80), "nose_w": (42.0, 45.0)},
}

_AGE_TEXTURE = {"A18-35": (0.018, 0.030), "A36-55": (0.030, 0.046), "A56-75": (0.046, 0.065)}


def _sample_face(rng: np.random.Generator, gender: str, age_band: str, ethnicity: str,
                 traits: frozenset[str], texture_seed: int) -> FaceParams:
    style = _ETHNICITY_STYLE[ethnicity]
    ax = rng.uniform(148.0, 172.0) * (1.04 if gender == "male" else 0.98)
    ay = ax * rng.uniform(1.24, 1.34)
    spacing = rng.uniform(0.32, 0.42) * 2.0 * ax
    light = rng.uniform(*style["light"])
    tint = style["tint"]
    skin = tuple(np.clip(light * np.asarray(tint) + rng.uniform(-0.015, 0.015, 3), 0.02, 0.98))
    marks: list[tuple[float, float, float, float]] = []
    mrng = rng
    if "moles" in traits:
        for _ in range(int(mrng.integers(1, 4))):
            marks.append((
                float(mrng.uniform(-0.55, 0.55)),
                float(mrng.uniform(-0.25, 0.62)),
                float(mrng.uniform(2.0, 4.0)),
                float(mrng.uniform(0.45, 0.65)),
            ))
    if "freckles" in traits:
        side = mrng.choice([-1.0, 1.0])
        for _ in range(int(mrng.integers(8, 16))):
            marks.append((
                float(side * mrng.uniform(0.18, 0.55) * mrng.choice([-1.0, 1.0])),
                float(mrng.uniform(0.02, 0.30)),
                float(mrng.uniform(0.9, 1.6)),
                float(mrng.uniform(0.18, 0.30)),
            ))
    return FaceParams(
        head_axes=(float(ax), float(ay)),
        eye_spacing=float(spacing),
        eye_offset=float(rng.uniform(0.13, 0.19)),
        nose_offset=float(rng.uniform(0.16, 0.22)),
        mouth_offset=float(rng.uniform(0.48, 0.56)),
        skin_rgb=tuple(float(c) for c in skin),
        texture_seed=texture_seed,
        marks=tuple(marks),
        eye_size=float(rng.uniform(34.0, 42.0)),
        iris_rgb=(float(rng.uniform(0.10, 0.45)), float(rng.uniform(0.10, 0.32)), float(rng.uniform(0.06, 0.25))),
        brow_offset=float(rng.uniform(0.09, 0.13)),
        brow_thickness=float(rng.uniform(3.0, 5.0)),
        nose_width=float(rng.uniform(*style["nose_w"])),
        mouth_width=float(rng.uniform(78.0, 98.0)),
        mouth_height=float(rng.uniform(22.0, 30.0)),
        lip_rgb=(float(rng.uniform(0.55, 0.70)), float(rng.uniform(0.28, 0.38)), float(rng.uniform(0.26, 0.36))),
        texture_amp=float(rng.uniform(*_AGE_TEXTURE[age_band])),
    )


def sample_population(seed: int, counts: Demographics | None = None):
    """Deterministically sample a labelled population.

    Returns a list of (SubjectRecord, FaceParams); marginal counts per
    gender, age band and ethnicity match ``counts`` exactly.
    """
    from .datamodel import SubjectRecord

    dem = counts or Demographics()
    dem.validate()
    rng = rng_for(seed, "population")

    cells = _gender_ethnicity_cells(dem)
    # age bands: apportion within cells against the remaining global pool
    remaining = list(dem.ages)
    assignments: list[tuple[str, str, str]] = []
    for (gender, eth), size in cells.items():
        if size == 0:
            continue
        take = _apportion(remaining, size)
        for band_idx, k in enumerate(take):
            remaining[band_idx] -= k
            assignments.extend((gender, eth, AGE_BANDS[band_idx]) for _ in range(k))
    rng.shuffle(assignments)

    partner_counts = _apportion([1, 1, 1], dem.total)
    partners = [p for p, k in zip(PARTNERS, partner_counts) for _ in range(k)]
    rng.shuffle(partners)

    population = []
    for idx, (gender, eth, band) in enumerate(assignments):
        sid = f"s{idx + 1:04d}"
        srng = rng_for(seed, "subject", sid)
        u = srng.uniform()
        if u < 0.76:
            traits = frozenset({"none"})
        elif u < 0.88:
            traits = frozenset({"freckles"})
        else:
            traits = frozenset({"moles"})
        record = SubjectRecord(
            subject_id=sid, gender=gender, age_band=band, ethnicity=eth,
            traits=traits, partner=partners[idx],
        )
        face = _sample_face(srng, gender, band, eth, traits, texture_seed=int(srng.integers(0, 2**31)))
        face.validate()
        population.append((record, face))
    return population


# --- lookalike pairing ------------------------------------------------------


@dataclass(frozen=True)
class PairingResult:
    pairs: tuple[tuple[str, str], ...]
    unpaired: tuple[str, ...] = ()


def _greedy_match(members: list[tuple[str, np.ndarray]]):
    """Greedy global minimum-distance matching; ties broken by id order."""
    pairs = []
    free = {sid: vec for sid, vec in members}
    while len(free) >= 2:
        ids = sorted(free)
        best = None
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                d = float(np.linalg.norm(free[ids[i]] - free[ids[j]]))
                key = (d, ids[i], ids[j])
                if best is None or key < best:
                    best = key
        _, a, b = best
        pairs.append((a, b))
        del free[a], free[b]
    return pairs, sorted(free)


def pair_lookalikes(population) -> PairingResult:
    """Disjoint same-gender pairs by greedy minimum parameter distance.

    Matching runs within (gender, ethnicity, age band) cells, then
    relaxes the age band, then the ethnicity; gender is never relaxed.
    Any remainder (odd gender cell) is reported unpaired.
    """
    vectors = {rec.subject_id: face.vector() for rec, face in population}
    meta = {rec.subject_id: rec for rec, _ in population}

    def members_of(ids):
        return [(sid, vectors[sid]) for sid in sorted(ids)]

    pairs: list[tuple[str, str]] = []
    leftovers: list[str] = []
    tiers = (
        lambda r: (r.gender, r.ethnicity, r.age_band),
        lambda r: (r.gender, r.ethnicity),
        lambda r: (r.gender,),
    )
    pool = sorted(vectors)
    for key_fn in tiers:
        groups: dict[tuple, list[str]] = {}
        for sid in pool:
            groups.setdefault(key_fn(meta[sid]), []).append(sid)
        next_pool: list[str] = []
        for key in sorted(groups):
            got, rest = _greedy_match(members_of(groups[key]))
            pairs.extend(got)
            next_pool.extend(rest)
        pool = sorted(next_pool)
    leftovers = pool
    return PairingResult(pairs=tuple(sorted(pairs)), unpaired=tuple(leftovers))
