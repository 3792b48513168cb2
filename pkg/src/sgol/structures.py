"""Containers passed between the model, the losses and the evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class DetectionOutput:
    """Raw per-query head outputs for one image (or a batch, leading axis B).

    ``boxes`` are center-form in (0, 1). Binary variants fill ``obj_logits``
    over {object, no-object}; the multi-class variant fills ``class_logits``
    whose last column is the no-object class.
    """

    boxes: Tensor
    obj_logits: Tensor | None = None
    class_logits: Tensor | None = None
    mask_logits: Tensor | None = None

    @property
    def num_queries(self) -> int:
        return self.boxes.shape[-2]

    @property
    def batched(self) -> bool:
        return self.boxes.ndim == 3

    def item(self, b: int) -> "DetectionOutput":
        """Detached view of batch element ``b``."""

        def pick(t):
            return None if t is None else Tensor(t.data[b])

        return DetectionOutput(pick(self.boxes), pick(self.obj_logits), pick(self.class_logits), pick(self.mask_logits))


@dataclass
class Targets:
    """Ground truth for one image: center-form boxes, class ids, optional masks."""

    boxes: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    masks: np.ndarray | None = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if self.labels.size == 0 and len(self.boxes):
            self.labels = np.zeros(len(self.boxes), dtype=int)

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class Detection:
    box: np.ndarray  # corner form, clamped to the image
    score: float
    label: int
    mask: np.ndarray | None = None


@dataclass
class DetectionSet:
    detections: list[Detection] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def __getitem__(self, i):
        return self.detections[i]

    @property
    def labels(self) -> list[int]:
        return [d.label for d in self.detections]

    @property
    def scores(self) -> np.ndarray:
        return np.array([d.score for d in self.detections])

    @property
    def boxes(self) -> np.ndarray:
        if not self.detections:
            return np.zeros((0, 4))
        return np.stack([d.box for d in self.detections])
