"""Writers for the descriptor-interchange file formats.

The consuming library defines these formats; this module re-implements
them so the two packages stay coupled through files alone.  A descriptor
file is a ``dim=<n>`` header line followed by one comma-separated row of
decimal reals per descriptor.  The manifest is a CSV with the header
``image_id,label,descriptors,mask`` where leading ``#`` lines are
comments.
"""

import numpy as np


def write_descriptor_file(path, descriptors):
    arr = np.asarray(descriptors, dtype=np.float64)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"dim={arr.shape[1]}\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def write_coords_file(path, keypoints):
    """One ``x,y`` row per keypoint, same order as the descriptor rows."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# x,y\n")
        for x, y in keypoints:
            fh.write(f"{x!r},{y!r}\n")


def write_manifest(path, rows, comments=()):
    """Write manifest rows (image_id, label, descriptor_path) plus comments."""
    with open(path, "w", encoding="utf-8") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        fh.write("image_id,label,descriptors,mask\n")
        for image_id, label, desc_path in rows:
            fh.write(f"{image_id},{label},{desc_path},\n")


def write_skip_log(path, skipped):
    with open(path, "w", encoding="utf-8") as fh:
        for name, reason in skipped:
            fh.write(f"{name}: {reason}\n")
