"""Descriptor extraction behind a small method registry.

Each supported method records its factory and its documented descriptor
width; the width is asserted against what the backend actually returns.
Binary descriptors (A-KAZE) are widened to one real per byte so the
output files stay metric-agnostic.  Methods missing from the installed
OpenCV build raise :class:`BackendError` with a uniform message.
"""

import os
from dataclasses import dataclass, field
from typing import Callable

import cv2
import numpy as np

from .formats import (
    write_coords_file,
    write_descriptor_file,
    write_manifest,
    write_skip_log,
)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff")


class ExtractionError(ValueError):
    """Unusable input: bad method, unreadable image, empty corpus."""


class BackendError(ExtractionError):
    """The installed OpenCV build does not provide the requested method."""


def _unsupported(name):
    return BackendError(f"method {name!r} is unsupported on the installed backend")


def _sift():
    factory = getattr(cv2, "SIFT_create", None)
    if factory is None:
        raise _unsupported("sift")
    return factory()


def _surf():
    contrib = getattr(cv2, "xfeatures2d", None)
    factory = getattr(contrib, "SURF_create", None) if contrib else None
    if factory is None:
        raise _unsupported("surf")
    return factory()


def _akaze():
    factory = getattr(cv2, "AKAZE_create", None)
    if factory is None:
        raise _unsupported("akaze")
    return factory()


@dataclass(frozen=True)
class Method:
    name: str
    dim: int
    create: Callable


METHODS = {
    "sift": Method("sift", 128, _sift),
    "surf": Method("surf", 64, _surf),
    "akaze": Method("akaze", 61, _akaze),
}


def available_methods():
    """Names of the registry methods the installed backend provides."""
    names = []
    for name, method in METHODS.items():
        try:
            method.create()
        except BackendError:
            continue
        names.append(name)
    return names


@dataclass
class ExtractionJob:
    in_dir: str
    method: str
    out_dir: str
    manifest_path: str
    coords: bool = False


@dataclass
class ExtractionReport:
    method: str
    manifest_path: str
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def normalized_gray(image):
    """Stretch a gray-scale image to the full 8-bit range.

    A constant image has no range to stretch and is returned unchanged;
    the detector will find nothing in it anyway.
    """
    lo = int(image.min())
    hi = int(image.max())
    if hi == lo:
        return image.copy()
    scaled = (image.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return np.rint(scaled).astype(np.uint8)


def _find_images(in_dir):
    found = []
    for root, _dirs, files in os.walk(in_dir):
        for name in files:
            if name.lower().endswith(IMAGE_SUFFIXES):
                full = os.path.join(root, name)
                rel = os.path.relpath(full, in_dir).replace(os.sep, "/")
                found.append((rel, full))
    found.sort()
    return found


def _label_for(rel):
    """The image's immediate subdirectory, or empty at the corpus root."""
    return rel.split("/", 1)[0] if "/" in rel else ""


def extract(job):
    """Run one extraction job; returns a report of written and skipped files."""
    method = METHODS.get(job.method)
    if method is None:
        raise ExtractionError(
            f"unknown method {job.method!r}; expected one of {', '.join(sorted(METHODS))}"
        )
    detector = method.create()

    images = _find_images(job.in_dir)
    if not images:
        raise ExtractionError(f"no images found under {job.in_dir!r}")

    os.makedirs(job.out_dir, exist_ok=True)
    manifest_dir = os.path.dirname(os.path.abspath(job.manifest_path))
    report = ExtractionReport(method=method.name, manifest_path=job.manifest_path)
    manifest_rows = []

    for rel, full in images:
        image = cv2.imread(full, cv2.IMREAD_GRAYSCALE)
        if image is None:
            raise ExtractionError(f"unreadable image {full!r}")
        keypoints, descriptors = detector.detectAndCompute(normalized_gray(image), None)
        if descriptors is None or len(keypoints) == 0:
            report.skipped.append((rel, "no keypoints detected"))
            continue
        desc = np.asarray(descriptors, dtype=np.float64)
        if desc.shape[1] != method.dim:
            raise ExtractionError(
                f"backend returned width {desc.shape[1]} for method {method.name!r},"
                f" documented width is {method.dim}"
            )

        image_id = rel.rsplit(".", 1)[0]
        stem = image_id.replace("/", "_")
        desc_name = f"{stem}.{method.name}.txt"
        desc_full = os.path.join(job.out_dir, desc_name)
        write_descriptor_file(desc_full, desc)
        if job.coords:
            write_coords_file(
                os.path.join(job.out_dir, f"{stem}.{method.name}.coords.csv"),
                [kp.pt for kp in keypoints],
            )
        rel_desc = os.path.relpath(desc_full, manifest_dir).replace(os.sep, "/")
        manifest_rows.append((image_id, _label_for(rel), rel_desc))
        report.rows.append((image_id, desc.shape[0]))

    write_skip_log(os.path.join(job.out_dir, "skipped.txt"), report.skipped)
    if not manifest_rows:
        raise ExtractionError(
            f"every image was skipped; see {os.path.join(job.out_dir, 'skipped.txt')}"
        )
    write_manifest(
        job.manifest_path,
        manifest_rows,
        comments=(f"backend: opencv {cv2.__version__}", f"method: {method.name}"),
    )
    return report
