"""Shared entities: subjects, images, morph provenance, benchmarks,
attempts, scores; plus the JSON-lines dataset manifest.

The manifest is UTF-8 JSON-lines with LF endings, one record per line,
each tagged with a ``kind`` discriminator (subject/image/benchmark).
Serialization is canonical (records ordered by kind then id, keys in
lexicographic order), so identical datasets produce identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

GENDERS = ("male", "female")
AGE_BANDS = ("A18-35", "A36-55", "A56-75")
ETHNICITIES = ("European", "African", "IndianAsian", "EastAsian", "MiddleEastern")
TRAITS = ("freckles", "moles", "none")
PARTNERS = ("HDA", "NTN", "UTW")

MORPH_ALGORITHMS = tuple(f"C{i:02d}" for i in range(1, 8))
AUTO_POST_MODES = tuple(f"PA{i:02d}" for i in range(1, 8))
MANUAL_POST_MODES = tuple(f"PM{i:02d}" for i in range(0, 7))
PRINT_SCAN_PIPELINES = tuple(f"F{i:02d}" for i in range(1, 27))

MORPH_ALPHAS = (0.3, 0.5)

#: Eye landmark corner indices in the 68-point layout (outer, inner per eye).
RIGHT_EYE_CORNERS = (36, 39)
LEFT_EYE_CORNERS = (42, 45)


class Mode(str, Enum):
    S_MAD = "S-MAD"
    D_MAD = "D-MAD"


class Medium(str, Enum):
    DIGITAL = "digital"
    PRINT_SCAN = "print_scan"


class ManifestError(ValueError):
    """Malformed manifest line or record."""


class IntegrityError(ValueError):
    """Cross-record invariant violation (dangling refs, bad counts, ...)."""


class UnknownAttributeError(ValueError):
    pass


class DegenerateSubsetError(ValueError):
    pass


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    gender: str
    age_band: str
    ethnicity: str
    traits: frozenset[str]
    partner: str

    def validate(self) -> None:
        if self.gender not in GENDERS:
            raise IntegrityError(f"{self.subject_id}: bad gender {self.gender!r}")
        if self.age_band not in AGE_BANDS:
            raise IntegrityError(f"{self.subject_id}: bad age band {self.age_band!r}")
        if self.ethnicity not in ETHNICITIES:
            raise IntegrityError(f"{self.subject_id}: bad ethnicity {self.ethnicity!r}")
        if self.partner not in PARTNERS:
            raise IntegrityError(f"{self.subject_id}: bad partner {self.partner!r}")
        if not self.traits or not self.traits.issubset(TRAITS):
            raise IntegrityError(f"{self.subject_id}: bad traits {sorted(self.traits)}")
        if "none" in self.traits and len(self.traits) != 1:
            raise IntegrityError(f"{self.subject_id}: traits 'none' must be a singleton")


@dataclass(frozen=True)
class MorphLineage:
    """Provenance of a morphed image.

    ``alpha`` is contributor_b's blend weight; at alpha 0.3 contributor_b
    is the hidden identity who contributed least.
    """

    contributor_a: str
    contributor_b: str
    alpha: float
    morph_algorithm: str
    auto_post: str
    manual_post: str
    print_scan_pipeline: str | None = None
    quality: str = "high"

    def validate(self) -> None:
        if self.alpha not in MORPH_ALPHAS:
            raise IntegrityError(f"morph alpha must be one of {MORPH_ALPHAS}: {self.alpha}")
        if self.morph_algorithm not in MORPH_ALGORITHMS:
            raise IntegrityError(f"bad morph algorithm {self.morph_algorithm!r}")
        if self.auto_post not in AUTO_POST_MODES:
            raise IntegrityError(f"bad auto post mode {self.auto_post!r}")
        if self.manual_post not in MANUAL_POST_MODES:
            raise IntegrityError(f"bad manual post mode {self.manual_post!r}")
        if self.print_scan_pipeline is not None and self.print_scan_pipeline not in PRINT_SCAN_PIPELINES:
            raise IntegrityError(f"bad print-scan pipeline {self.print_scan_pipeline!r}")
        if self.quality not in ("low", "high"):
            raise IntegrityError(f"bad quality label {self.quality!r}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    subject_ids: tuple[str, ...]
    role: str  # enrolment | gate
    medium: str  # digital | print_scan
    cls: str  # bona_fide | morph
    pixel_path: str
    width: int
    height: int
    eye_distance: float
    landmark_path: str | None = None
    lineage: MorphLineage | None = None

    def validate(self) -> None:
        if self.role not in ("enrolment", "gate"):
            raise IntegrityError(f"{self.image_id}: bad role {self.role!r}")
        if self.medium not in (Medium.DIGITAL.value, Medium.PRINT_SCAN.value):
            raise IntegrityError(f"{self.image_id}: bad medium {self.medium!r}")
        if self.cls not in ("bona_fide", "morph"):
            raise IntegrityError(f"{self.image_id}: bad class {self.cls!r}")
        is_morph = self.cls == "morph"
        if is_morph != (self.lineage is not None) or is_morph != (len(self.subject_ids) == 2):
            raise IntegrityError(
                f"{self.image_id}: morph class, lineage and two subject ids must coincide"
            )
        if not is_morph and len(self.subject_ids) != 1:
            raise IntegrityError(f"{self.image_id}: bona fide image needs exactly one subject")
        if self.role == "gate" and self.medium != Medium.DIGITAL.value:
            raise IntegrityError(f"{self.image_id}: gate images are always digital")
        if not (self.eye_distance > 0):
            raise IntegrityError(f"{self.image_id}: eye_distance must be positive")
        if self.width <= 0 or self.height <= 0:
            raise IntegrityError(f"{self.image_id}: bad dimensions")
        if self.lineage is not None:
            self.lineage.validate()
            ps = self.lineage.print_scan_pipeline is not None
            if ps != (self.medium == Medium.PRINT_SCAN.value):
                raise IntegrityError(
                    f"{self.image_id}: print_scan_pipeline present iff medium is print_scan"
                )


@dataclass(frozen=True)
class AttemptSpec:
    attempt_id: str
    suspect: str
    label: str  # bona_fide | morph
    trusted: str | None = None

    def validate(self, mode: Mode) -> None:
        if self.label not in ("bona_fide", "morph"):
            raise IntegrityError(f"{self.attempt_id}: bad label {self.label!r}")
        if (self.trusted is not None) != (mode is Mode.D_MAD):
            raise IntegrityError(
                f"{self.attempt_id}: trusted image present iff D-MAD benchmark"
            )


@dataclass(frozen=True)
class BenchmarkSpec:
    benchmark_id: str
    mode: Mode
    medium: str
    attempts: tuple[AttemptSpec, ...]
    expected_bona_fide: int
    expected_morph: int

    def validate(self) -> None:
        seen = set()
        n_bf = n_m = 0
        for att in self.attempts:
            att.validate(self.mode)
            if att.attempt_id in seen:
                raise IntegrityError(f"duplicate attempt id {att.attempt_id}")
            seen.add(att.attempt_id)
            if att.label == "bona_fide":
                n_bf += 1
            else:
                n_m += 1
        if (n_bf, n_m) != (self.expected_bona_fide, self.expected_morph):
            raise IntegrityError(
                f"{self.benchmark_id}: expected counts ({self.expected_bona_fide}, "
                f"{self.expected_morph}) do not match attempt tally ({n_bf}, {n_m})"
            )


REJECT_CODES = ("no_face", "align_fail", "too_small", "embed_fail", "other", "engine_abort")


@dataclass(frozen=True)
class ScoreRecord:
    attempt_id: str
    score: float | None = None
    reject_code: str | None = None
    wall_time_ms: float = 0.0

    @property
    def rejected(self) -> bool:
        return self.reject_code is not None

    def validate(self) -> None:
        if (self.score is None) == (self.reject_code is None):
            raise IntegrityError(f"{self.attempt_id}: exactly one of score/reject required")
        if self.score is not None:
            if not math.isfinite(self.score) or not (0.0 <= self.score <= 1.0):
                raise IntegrityError(f"{self.attempt_id}: score out of [0,1]: {self.score}")
        elif self.reject_code not in REJECT_CODES:
            raise IntegrityError(f"{self.attempt_id}: unknown reject code {self.reject_code!r}")


@dataclass
class Dataset:
    subjects: dict[str, SubjectRecord] = field(default_factory=dict)
    images: dict[str, ImageRecord] = field(default_factory=dict)
    benchmarks: dict[str, BenchmarkSpec] = field(default_factory=dict)
    root: Path | None = None

    def add_subject(self, rec: SubjectRecord) -> None:
        if rec.subject_id in self.subjects:
            raise IntegrityError(f"duplicate subject id {rec.subject_id}")
        self.subjects[rec.subject_id] = rec

    def add_image(self, rec: ImageRecord) -> None:
        if rec.image_id in self.images:
            raise IntegrityError(f"duplicate image id {rec.image_id}")
        self.images[rec.image_id] = rec

    def add_benchmark(self, rec: BenchmarkSpec) -> None:
        if rec.benchmark_id in self.benchmarks:
            raise IntegrityError(f"duplicate benchmark id {rec.benchmark_id}")
        self.benchmarks[rec.benchmark_id] = rec

    def image_path(self, image_id: str) -> Path:
        if self.root is None:
            raise IntegrityError("dataset has no filesystem root")
        return self.root / self.images[image_id].pixel_path

    def landmark_file(self, image_id: str) -> Path | None:
        rec = self.images[image_id]
        if rec.landmark_path is None or self.root is None:
            return None
        return self.root / rec.landmark_path

    def validate(self, check_files: bool = False) -> None:
        for rec in self.subjects.values():
            rec.validate()
        for rec in self.images.values():
            rec.validate()
            for sid in rec.subject_ids:
                if sid not in self.subjects:
                    raise IntegrityError(f"{rec.image_id}: unknown subject {sid}")
            if rec.lineage is not None:
                if set(rec.subject_ids) != {rec.lineage.contributor_a, rec.lineage.contributor_b}:
                    raise IntegrityError(f"{rec.image_id}: lineage contributors != subject_ids")
        for bench in self.benchmarks.values():
            bench.validate()
            for att in bench.attempts:
                for iid in filter(None, (att.suspect, att.trusted)):
                    if iid not in self.images:
                        raise IntegrityError(f"{att.attempt_id}: unknown image {iid}")
                suspect = self.images[att.suspect]
                want = "morph" if att.label == "morph" else "bona_fide"
                if suspect.cls != want:
                    raise IntegrityError(f"{att.attempt_id}: label does not match suspect class")
                if check_files and not self.image_path(att.suspect).is_file():
                    raise IntegrityError(f"{att.attempt_id}: missing file {suspect.pixel_path}")
                if check_files and att.trusted and not self.image_path(att.trusted).is_file():
                    raise IntegrityError(f"{att.attempt_id}: missing trusted image file")
        if check_files:
            self._check_landmark_consistency()

    def _check_landmark_consistency(self) -> None:
        benchmark_images = {
            iid
            for bench in self.benchmarks.values()
            for att in bench.attempts
            for iid in (att.suspect, att.trusted)
            if iid
        }
        for iid in benchmark_images:
            rec = self.images[iid]
            lm_path = self.landmark_file(iid)
            if lm_path is None or not lm_path.is_file():
                continue
            pts = read_landmarks(lm_path)
            measured = eye_distance_from_landmarks(pts)
            if abs(measured - rec.eye_distance) > 1.0:
                raise IntegrityError(
                    f"{iid}: stored eye_distance {rec.eye_distance:.2f} differs from "
                    f"landmark-derived {measured:.2f} by more than 1 px"
                )


# --- landmark sidecar files (68 lines, "x y", <= 3 fraction digits) ---


def write_landmarks(path: Path, points) -> None:
    lines = [f"{x:.3f} {y:.3f}" for x, y in points]
    if len(lines) != 68:
        raise ValueError(f"landmark set must have 68 points, got {len(lines)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_landmarks(path: Path):
    import numpy as np

    pts = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        parts = line.split()
        if len(parts) != 2:
            raise ManifestError(f"{path}:{i + 1}: bad landmark line")
        pts.append((float(parts[0]), float(parts[1])))
    if len(pts) != 68:
        raise ManifestError(f"{path}: expected 68 landmarks, found {len(pts)}")
    return np.asarray(pts, dtype=float)


def eye_distance_from_landmarks(points) -> float:
    right = (points[RIGHT_EYE_CORNERS[0]] + points[RIGHT_EYE_CORNERS[1]]) / 2.0
    left = (points[LEFT_EYE_CORNERS[0]] + points[LEFT_EYE_CORNERS[1]]) / 2.0
    return float(math.hypot(left[0] - right[0], left[1] - right[1]))


# --- manifest serialization ---


def _subject_to_doc(rec: SubjectRecord) -> dict:
    return {
        "kind": "subject",
        "subject_id": rec.subject_id,
        "gender": rec.gender,
        "age_band": rec.age_band,
        "ethnicity": rec.ethnicity,
        "traits": sorted(rec.traits),
        "partner": rec.partner,
    }


def _image_to_doc(rec: ImageRecord) -> dict:
    doc = {
        "kind": "image",
        "image_id": rec.image_id,
        "subject_ids": list(rec.subject_ids),
        "role": rec.role,
        "medium": rec.medium,
        "cls": rec.cls,
        "pixel_path": rec.pixel_path,
        "landmark_path": rec.landmark_path,
        "width": rec.width,
        "height": rec.height,
        "eye_distance": rec.eye_distance,
    }
    if rec.lineage is not None:
        lin = rec.lineage
        doc["lineage"] = {
            "contributor_a": lin.contributor_a,
            "contributor_b": lin.contributor_b,
            "alpha": lin.alpha,
            "morph_algorithm": lin.morph_algorithm,
            "auto_post": lin.auto_post,
            "manual_post": lin.manual_post,
            "print_scan_pipeline": lin.print_scan_pipeline,
            "quality": lin.quality,
        }
    return doc


def _benchmark_to_doc(rec: BenchmarkSpec) -> dict:
    return {
        "kind": "benchmark",
        "benchmark_id": rec.benchmark_id,
        "mode": rec.mode.value,
        "medium": rec.medium,
        "expected_bona_fide": rec.expected_bona_fide,
        "expected_morph": rec.expected_morph,
        "attempts": [
            {
                "attempt_id": a.attempt_id,
                "suspect": a.suspect,
                "trusted": a.trusted,
                "label": a.label,
            }
            for a in rec.attempts
        ],
    }


def serialize_manifest(dataset: Dataset) -> bytes:
    lines = []
    for sid in sorted(dataset.subjects):
        lines.append(json.dumps(_subject_to_doc(dataset.subjects[sid]), sort_keys=True))
    for iid in sorted(dataset.images):
        lines.append(json.dumps(_image_to_doc(dataset.images[iid]), sort_keys=True))
    for bid in sorted(dataset.benchmarks):
        lines.append(json.dumps(_benchmark_to_doc(dataset.benchmarks[bid]), sort_keys=True))
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_manifest(dataset: Dataset, path: Path) -> None:
    Path(path).write_bytes(serialize_manifest(dataset))


def _parse_subject(doc: dict) -> SubjectRecord:
    return SubjectRecord(
        subject_id=doc["subject_id"],
        gender=doc["gender"],
        age_band=doc["age_band"],
        ethnicity=doc["ethnicity"],
        traits=frozenset(doc["traits"]),
        partner=doc["partner"],
    )


def _parse_image(doc: dict) -> ImageRecord:
    lineage = None
    if doc.get("lineage") is not None:
        lin = doc["lineage"]
        lineage = MorphLineage(
            contributor_a=lin["contributor_a"],
            contributor_b=lin["contributor_b"],
            alpha=lin["alpha"],
            morph_algorithm=lin["morph_algorithm"],
            auto_post=lin["auto_post"],
            manual_post=lin["manual_post"],
            print_scan_pipeline=lin.get("print_scan_pipeline"),
            quality=lin.get("quality", "high"),
        )
    return ImageRecord(
        image_id=doc["image_id"],
        subject_ids=tuple(doc["subject_ids"]),
        role=doc["role"],
        medium=doc["medium"],
        cls=doc["cls"],
        pixel_path=doc["pixel_path"],
        landmark_path=doc.get("landmark_path"),
        width=doc["width"],
        height=doc["height"],
        eye_distance=doc["eye_distance"],
        lineage=lineage,
    )


def _parse_benchmark(doc: dict) -> BenchmarkSpec:
    attempts = tuple(
        AttemptSpec(
            attempt_id=a["attempt_id"],
            suspect=a["suspect"],
            trusted=a.get("trusted"),
            label=a["label"],
        )
        for a in doc["attempts"]
    )
    return BenchmarkSpec(
        benchmark_id=doc["benchmark_id"],
        mode=Mode(doc["mode"]),
        medium=doc["medium"],
        attempts=attempts,
        expected_bona_fide=doc["expected_bona_fide"],
        expected_morph=doc["expected_morph"],
    )


_PARSERS = {"subject": _parse_subject, "image": _parse_image, "benchmark": _parse_benchmark}


def load_manifest(path: Path, check_files: bool = False) -> Dataset:
    """Load and fully validate a JSON-lines manifest.

    Parse errors carry the 1-based line number; dangling references and
    invariant violations raise IntegrityError.
    """
    path = Path(path)
    dataset = Dataset(root=path.parent)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            kind = doc.get("kind")
            parser = _PARSERS.get(kind)
            if parser is None:
                raise ManifestError(f"{path}:{lineno}: unknown record kind {kind!r}")
            try:
                rec = parser(doc)
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad {kind} record: {exc}") from exc
            if kind == "subject":
                dataset.add_subject(rec)
            elif kind == "image":
                dataset.add_image(rec)
            else:
                dataset.add_benchmark(rec)
    dataset.validate(check_files=check_files)
    return dataset


# --- attribute subsetting ---

SUBSET_ATTRIBUTES = (
    "gender",
    "ethnicity",
    "age",
    "traits",
    "partner",
    "post_processing",
    "morph_algorithm",
    "manual_post",
    "print_scan_pipeline",
    "quality",
)

_ATTRIBUTE_ALIASES = {"morph_quality": "quality", "age_band": "age"}


def morph_attribute(dataset: Dataset, image: ImageRecord, attribute: str) -> object:
    """Attribute value of a morph image for subsetting.

    Subject-level attributes are taken from contributor_a.
    """
    attribute = _ATTRIBUTE_ALIASES.get(attribute, attribute)
    if attribute not in SUBSET_ATTRIBUTES:
        raise UnknownAttributeError(f"unknown subset attribute {attribute!r}")
    lin = image.lineage
    if lin is None:
        raise IntegrityError(f"{image.image_id}: not a morph")
    if attribute in ("gender", "ethnicity", "age", "traits", "partner"):
        subj = dataset.subjects[lin.contributor_a]
        return {
            "gender": subj.gender,
            "ethnicity": subj.ethnicity,
            "age": subj.age_band,
            "traits": subj.traits,
            "partner": subj.partner,
        }[attribute]
    return {
        "post_processing": "automatic" if lin.manual_post == "PM00" else "manual",
        "morph_algorithm": lin.morph_algorithm,
        "manual_post": lin.manual_post,
        "print_scan_pipeline": lin.print_scan_pipeline,
        "quality": lin.quality,
    }[attribute]


def _matches(dataset: Dataset, image: ImageRecord, attribute: str, value: str) -> bool:
    actual = morph_attribute(dataset, image, attribute)
    if isinstance(actual, frozenset):
        return value in actual
    return actual == value


def filter_subset(dataset: Dataset, attempts, predicate) -> list[AttemptSpec]:
    """Attempts whose suspect matches every (attribute, value) term.

    Bona fide attempts are retained unconditionally so subset EER stays
    computable; predicates only filter the morph side. ``predicate`` is a
    mapping or an iterable of (attribute, value) pairs.
    """
    terms = list(predicate.items()) if isinstance(predicate, dict) else list(predicate)
    for attr, _ in terms:
        canonical = _ATTRIBUTE_ALIASES.get(attr, attr)
        if canonical not in SUBSET_ATTRIBUTES:
            raise UnknownAttributeError(f"unknown subset attribute {attr!r}")
    kept: list[AttemptSpec] = []
    any_morph_seen = False
    any_morph_kept = False
    for att in attempts:
        if att.label == "bona_fide":
            kept.append(att)
            continue
        any_morph_seen = True
        image = dataset.images[att.suspect]
        if all(_matches(dataset, image, attr, value) for attr, value in terms):
            kept.append(att)
            any_morph_kept = True
    if any_morph_seen and terms and not any_morph_kept:
        raise DegenerateSubsetError(f"degenerate subset: no morph attempt matches {terms}")
    return kept
