"""Keypoint vocabularies and instance annotations.

A :class:`KeypointSchema` describes one dataset's keypoint layout: the
ordered names, which indices swap under a horizontal flip, the skeleton
edges used for rendering, and the per-keypoint OKS falloff constants used
by the evaluator. :class:`InstanceRecord` is a single annotated animal
instance and :class:`DatasetSplit` an immutable list of records sharing a
schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


def build_flip_pairs(names: Sequence[str]) -> tuple[tuple[int, int], ...]:
    """Pair up left_*/right_* keypoint names into flip index pairs.

    Names that do not start with a left/right marker (nose, neck, ...) are
    their own mirror and are omitted. Raises if a left name has no right
    counterpart.
    """
    index = {n: i for i, n in enumerate(names)}
    pairs = []
    for name, i in index.items():
        for prefix, mirror in (("left_", "right_"), ("left ", "right ")):
            if name.startswith(prefix):
                other = mirror + name[len(prefix):]
                if other not in index:
                    raise ValueError(f"keypoint {name!r} has no mirror {other!r}")
                pairs.append((i, index[other]))
    return tuple(sorted(pairs))


@dataclass(frozen=True)
class KeypointSchema:
    """Keypoint vocabulary for one dataset.

    Attributes:
        name: Short identifier, e.g. ``"ap10k"``.
        keypoint_names: Ordered list of N unique keypoint names.
        flip_pairs: Index pairs (left, right) swapped by horizontal flip.
        skeleton: Index pairs forming bone edges, used for rendering.
        oks_sigmas: N positive falloff constants for OKS evaluation.
    """

    name: str
    keypoint_names: tuple[str, ...]
    flip_pairs: tuple[tuple[int, int], ...] = ()
    skeleton: tuple[tuple[int, int], ...] = ()
    oks_sigmas: tuple[float, ...] = ()

    def __post_init__(self):
        names = tuple(self.keypoint_names)
        object.__setattr__(self, "keypoint_names", names)
        if len(names) < 1:
            raise ValueError("schema needs at least one keypoint")
        if any(not n for n in names):
            raise ValueError("keypoint names must be nonempty")
        if len(set(names)) != len(names):
            raise ValueError("keypoint names must be unique")
        n = len(names)
        object.__setattr__(self, "flip_pairs", tuple(tuple(p) for p in self.flip_pairs))
        object.__setattr__(self, "skeleton", tuple(tuple(e) for e in self.skeleton))
        for a, b in list(self.flip_pairs) + list(self.skeleton):
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"index pair ({a}, {b}) out of range for N={n}")
        flat = [i for p in self.flip_pairs for i in p]
        if len(set(flat)) != len(flat):
            raise ValueError("flip pairs must be disjoint")
        if not self.oks_sigmas:
            # Uniform fallback when a dataset publishes no constants.
            object.__setattr__(self, "oks_sigmas", (0.05,) * n)
        else:
            object.__setattr__(self, "oks_sigmas", tuple(float(s) for s in self.oks_sigmas))
        if len(self.oks_sigmas) != n:
            raise ValueError(f"need {n} oks_sigmas, got {len(self.oks_sigmas)}")
        if any(s <= 0 for s in self.oks_sigmas):
            raise ValueError("oks_sigmas must be positive")

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoint_names)

    def keypoint_phrases(self) -> list[str]:
        """Human-readable names for prompt text ("left_front_paw" -> "left front paw")."""
        return [n.replace("_", " ").strip() for n in self.keypoint_names]


@dataclass(frozen=True)
class InstanceRecord:
    """One annotated animal instance.

    Attributes:
        instance_id: Annotation id, unique within a dataset.
        image_path: Path of the source image (relative to the image root).
        image_size: (width, height) of the source image in pixels.
        bbox: (x, y, w, h) box in image pixels.
        keypoints: List of N (x, y, v) triples; v follows the usual
            convention 0=unlabeled, 1=labeled-invisible, 2=visible.
        species: Species label (empty string when unknown).
        family: Taxonomic family label (empty string when unknown).
        area: Instance area in px^2; falls back to bbox area.
    """

    instance_id: int
    image_path: str
    image_size: tuple[int, int]
    bbox: tuple[float, float, float, float]
    keypoints: tuple[tuple[float, float, int], ...]
    species: str = ""
    family: str = ""
    area: float = 0.0

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValueError(f"instance {self.instance_id}: degenerate bbox {self.bbox}")
        object.__setattr__(self, "keypoints", tuple(tuple(k) for k in self.keypoints))
        iw, ih = self.image_size
        for i, (kx, ky, v) in enumerate(self.keypoints):
            if v > 0 and not (0 <= kx < iw and 0 <= ky < ih):
                raise ValueError(
                    f"instance {self.instance_id}: visible keypoint {i} at "
                    f"({kx}, {ky}) outside image {iw}x{ih}"
                )
        if self.area <= 0:
            object.__setattr__(self, "area", float(w * h))

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints)

    def keypoint_array(self):
        """Return (N, 2) float64 coordinates and (N,) int visibility arrays."""
        import numpy as np

        kp = np.asarray([(x, y) for x, y, _ in self.keypoints], dtype=np.float64)
        vis = np.asarray([v for _, _, v in self.keypoints], dtype=np.int64)
        return kp, vis


SPLIT_KINDS = ("supervised", "fewshot", "zeroshot-train", "zeroshot-test")


@dataclass(frozen=True)
class DatasetSplit:
    """Immutable list of records sharing one schema."""

    records: tuple[InstanceRecord, ...]
    schema: KeypointSchema
    split_kind: str = "supervised"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.split_kind not in SPLIT_KINDS:
            raise ValueError(f"unknown split_kind {self.split_kind!r}")
        n = self.schema.num_keypoints
        for r in self.records:
            if r.num_keypoints != n:
                raise ValueError(
                    f"instance {r.instance_id} has {r.num_keypoints} keypoints, schema has {n}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def species_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.species] = counts.get(r.species, 0) + 1
        return counts

    def families(self) -> set[str]:
        return {r.family for r in self.records if r.family}

    def instance_ids(self) -> list[int]:
        return [r.instance_id for r in self.records]


# Keypoint layout of the 17-point animal dataset (two eyes, nose, neck,
# tail root, shoulders/elbows/front paws, hips/knees/back paws).
AP10K_KEYPOINTS = (
    "left_eye", "right_eye", "nose", "neck", "root_of_tail",
    "left_shoulder", "left_elbow", "left_front_paw",
    "right_shoulder", "right_elbow", "right_front_paw",
    "left_hip", "left_knee", "left_back_paw",
    "right_hip", "right_knee", "right_back_paw",
)

AP10K_SKELETON = (
    (0, 1), (0, 2), (1, 2), (2, 3), (3, 4),
    (3, 5), (5, 6), (6, 7),
    (3, 8), (8, 9), (9, 10),
    (4, 11), (11, 12), (12, 13),
    (4, 14), (14, 15), (15, 16),
)

# Published evaluation constants for the 17-point layout.
AP10K_SIGMAS = (
    0.025, 0.025, 0.026, 0.035, 0.035,
    0.079, 0.072, 0.062,
    0.079, 0.072, 0.062,
    0.107, 0.087, 0.089,
    0.107, 0.087, 0.089,
)

AP10K_SCHEMA = KeypointSchema(
    name="ap10k",
    keypoint_names=AP10K_KEYPOINTS,
    flip_pairs=build_flip_pairs(AP10K_KEYPOINTS),
    skeleton=AP10K_SKELETON,
    oks_sigmas=AP10K_SIGMAS,
)

# 20-point layout (eyes, earbases, nose, throat, tail base, withers, four
# elbows, four knees, four paws). No published sigmas; uniform fallback.
ANIMALPOSE_KEYPOINTS = (
    "left_eye", "right_eye", "left_earbase", "right_earbase",
    "nose", "throat", "tail_base", "withers",
    "left_front_elbow", "right_front_elbow", "left_back_elbow", "right_back_elbow",
    "left_front_knee", "right_front_knee", "left_back_knee", "right_back_knee",
    "left_front_paw", "right_front_paw", "left_back_paw", "right_back_paw",
)

ANIMALPOSE_SKELETON = (
    (0, 1), (0, 2), (1, 3), (0, 4), (1, 4), (4, 5),
    (5, 7), (7, 6),
    (5, 8), (8, 12), (12, 16),
    (5, 9), (9, 13), (13, 17),
    (6, 10), (10, 14), (14, 18),
    (6, 11), (11, 15), (15, 19),
)

ANIMALPOSE_SCHEMA = KeypointSchema(
    name="animalpose",
    keypoint_names=ANIMALPOSE_KEYPOINTS,
    flip_pairs=build_flip_pairs(ANIMALPOSE_KEYPOINTS),
    skeleton=ANIMALPOSE_SKELETON,
)

BUILTIN_SCHEMAS = {s.name: s for s in (AP10K_SCHEMA, ANIMALPOSE_SCHEMA)}
