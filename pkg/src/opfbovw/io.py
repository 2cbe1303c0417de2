"""File formats: descriptors, manifests, dictionaries, models, reports.

Text descriptor files carry a ``dim=<n>`` header line followed by one
comma-separated row per descriptor.  The binary variant stores the same
payload as little-endian float32 behind a magic/version header.  All
readers raise :class:`~opfbovw.core.DataError` with the offending file
(and line, where applicable) rather than propagating parser internals.
JSON writers emit stable key order and no timestamps, so identical
inputs produce byte-identical files.
"""

import csv
import json
import os
import struct

import numpy as np

from .core import DataError, Dataset, ImageRecord, RegionMask
from .dictionary import Dictionary
from .supervised import CplModel, KnnModel

__all__ = [
    "read_descriptors",
    "write_descriptors",
    "read_descriptors_binary",
    "write_descriptors_binary",
    "read_dictionary",
    "write_dictionary",
    "read_model",
    "write_model",
    "read_manifest",
    "write_dataset",
    "read_pgm",
    "read_coords",
    "read_config",
    "read_predictions",
    "write_histograms",
    "write_report",
    "render_table",
]

BINARY_MAGIC = b"OPFD"
BINARY_VERSION = 1
DICTIONARY_FORMAT = "opf-bovw-dictionary"
MODEL_FORMAT = "opf-bovw-model"


def _fail(path, message, line=None):
    where = f"{path}:{line}" if line is not None else str(path)
    raise DataError(f"{where}: {message}")


# -- descriptor files -------------------------------------------------------

def read_descriptors(path):
    """Read a descriptor file, sniffing the binary magic first."""
    with open(path, "rb") as fh:
        if fh.read(4) == BINARY_MAGIC:
            return read_descriptors_binary(path)
    return read_descriptors_text(path)


def read_descriptors_text(path):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("dim="):
            _fail(path, f"expected 'dim=<n>' header, got {header.strip()!r}", line=1)
        try:
            dim = int(header[4:].strip())
        except ValueError:
            _fail(path, f"malformed dimension in header {header.strip()!r}", line=1)
        if dim < 1:
            _fail(path, f"dimension must be positive, got {dim}", line=1)
        # Peek for an empty body, then rewind so loadtxt streams straight
        # from the handle (buffering the whole file first is measurably
        # slower on large inputs).
        pos = fh.tell()
        line = fh.readline()
        while line and not line.strip():
            line = fh.readline()
        if not line:
            return np.empty((0, dim), dtype=np.float64)
        fh.seek(pos)
        try:
            data = np.loadtxt(fh, delimiter=",", comments=None, ndmin=2, dtype=np.float64)
        except ValueError:
            _raise_text_diagnostic(path, dim)
    if data.shape[1] != dim:
        _fail(path, f"rows have {data.shape[1]} values but header declares dim={dim}", line=2)
    bad_rows = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if bad_rows.size:
        _fail(path, "non-finite value", line=_data_line_number(path, int(bad_rows[0])))
    return data


def _data_lines(path):
    """Yield (line_number, text) for non-blank lines after the header."""
    with open(path, "r", encoding="ascii") as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            if line.strip():
                yield lineno, line


def _data_line_number(path, row):
    for count, (lineno, _) in enumerate(_data_lines(path)):
        if count == row:
            return lineno
    return row + 2


def _raise_text_diagnostic(path, dim):
    """Locate the first malformed row for a precise error message."""
    for lineno, line in _data_lines(path):
        fields = line.split(",")
        if len(fields) != dim:
            _fail(path, f"expected {dim} values, found {len(fields)}", line=lineno)
        for f in fields:
            try:
                float(f)
            except ValueError:
                _fail(path, f"cannot parse value {f.strip()!r}", line=lineno)
    _fail(path, "malformed descriptor rows")


def write_descriptors(path, descriptors):
    arr = np.asarray(descriptors, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"descriptors must form a 2-d array, got shape {arr.shape}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"dim={arr.shape[1]}\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_descriptors_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 13:
        _fail(path, "file too short for a binary descriptor header")
    magic, version, dim, count = struct.unpack("<4sBII", blob[:13])
    if magic != BINARY_MAGIC:
        _fail(path, f"bad magic {magic!r}")
    if version != BINARY_VERSION:
        _fail(path, f"unsupported binary version {version}")
    expected = 13 + 4 * dim * count
    if len(blob) != expected:
        _fail(path, f"payload is {len(blob) - 13} bytes, expected {4 * dim * count}")
    data = np.frombuffer(blob, dtype="<f4", offset=13).astype(np.float64)
    return data.reshape(count, dim)


def write_descriptors_binary(path, descriptors):
    arr = np.asarray(descriptors, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"descriptors must form a 2-d array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sBII", BINARY_MAGIC, BINARY_VERSION, arr.shape[1], arr.shape[0]))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


# -- dictionaries and models ------------------------------------------------

def _load_json(path, expected_format):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        _fail(path, f"not valid JSON ({exc})")
    if not isinstance(obj, dict) or obj.get("format") != expected_format:
        _fail(path, f"not a {expected_format} file")
    if obj.get("version") != 1:
        _fail(path, f"unsupported {expected_format} version {obj.get('version')!r}")
    return obj


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def write_dictionary(path, dictionary):
    _dump_json(
        path,
        {
            "format": DICTIONARY_FORMAT,
            "version": 1,
            "builder": dictionary.builder,
            "dim": dictionary.dim,
            "size": dictionary.size,
            "params": dictionary.params,
            "words": [[float(v) for v in row] for row in dictionary.words],
        },
    )


def read_dictionary(path):
    obj = _load_json(path, DICTIONARY_FORMAT)
    builder = obj.get("builder")
    if builder not in ("random", "kmeans", "opf"):
        _fail(path, f"unknown builder {builder!r}")
    try:
        words = np.asarray(obj["words"], dtype=np.float64)
        dim = int(obj["dim"])
        size = int(obj["size"])
    except (KeyError, TypeError, ValueError) as exc:
        _fail(path, f"malformed dictionary payload ({exc})")
    if words.ndim != 2 or words.shape != (size, dim):
        _fail(path, f"words shape {words.shape} does not match declared size={size}, dim={dim}")
    return Dictionary(words=words, builder=builder, params=dict(obj.get("params", {})))


def write_model(path, model, label_set, normalization="none"):
    common = {
        "format": MODEL_FORMAT,
        "version": 1,
        "label_set": list(label_set),
        "normalization": normalization,
        "dim": int(model.nodes.shape[1]),
        "nodes": [[float(v) for v in row] for row in model.nodes],
        "true_labels": [int(v) for v in model.true_labels],
        "labels": [int(v) for v in model.labels],
        "cost": [float(v) for v in model.cost],
        "prototypes": [int(v) for v in model.prototypes],
    }
    if isinstance(model, CplModel):
        common["kind"] = "opf_cpl"
        common["order"] = [int(v) for v in model.order]
    elif isinstance(model, KnnModel):
        common["kind"] = "opf_knn"
        common.update(
            density=[float(v) for v in model.density],
            k=int(model.k),
            bandwidth=float(model.bandwidth),
            degenerate=bool(model.degenerate),
        )
    else:
        raise DataError(f"cannot serialise model of type {type(model).__name__}")
    _dump_json(path, common)


def read_model(path):
    """Load a model file; returns (model, label_set, normalization)."""
    obj = _load_json(path, MODEL_FORMAT)
    kind = obj.get("kind")
    try:
        nodes = np.asarray(obj["nodes"], dtype=np.float64)
        true_labels = np.asarray(obj["true_labels"], dtype=np.int64)
        labels = np.asarray(obj["labels"], dtype=np.int64)
        cost = np.asarray(obj["cost"], dtype=np.float64)
        prototypes = np.asarray(obj["prototypes"], dtype=np.int64)
        label_set = [str(v) for v in obj["label_set"]]
        if kind == "opf_cpl":
            model = CplModel(
                nodes=nodes,
                true_labels=true_labels,
                labels=labels,
                cost=cost,
                order=np.asarray(obj["order"], dtype=np.int64),
                prototypes=prototypes,
            )
        elif kind == "opf_knn":
            model = KnnModel(
                nodes=nodes,
                true_labels=true_labels,
                labels=labels,
                cost=cost,
                density=np.asarray(obj["density"], dtype=np.float64),
                k=int(obj["k"]),
                bandwidth=float(obj["bandwidth"]),
                degenerate=bool(obj["degenerate"]),
                prototypes=prototypes,
            )
        else:
            _fail(path, f"unknown model kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        _fail(path, f"malformed model payload ({exc})")
    return model, label_set, str(obj.get("normalization", "none"))


# -- manifests and datasets --------------------------------------------------

MANIFEST_COLUMNS = ["image_id", "label", "descriptors", "mask"]


def read_manifest(path):
    """Load a manifest CSV and every file it references into a dataset.

    Lines starting with ``#`` are comments; a ``# labels: a,b`` line
    pins the label order, otherwise labels are ordered by first
    appearance.  Paths are resolved relative to the manifest location.
    """
    base = os.path.dirname(os.path.abspath(path))
    declared = None
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        raw_lines = fh.readlines()
    data_lines = []
    for lineno, line in enumerate(raw_lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            directive = stripped.lstrip("#").strip()
            if directive.lower().startswith("labels:"):
                declared = [v.strip() for v in directive[7:].split(",") if v.strip()]
            continue
        data_lines.append((lineno, line))
    if not data_lines:
        _fail(path, "manifest has no header row")

    header_line, rest = data_lines[0], data_lines[1:]
    header = next(csv.reader([header_line[1]]))
    if [h.strip() for h in header] != MANIFEST_COLUMNS:
        _fail(path, f"header must be {','.join(MANIFEST_COLUMNS)}", line=header_line[0])
    for lineno, line in rest:
        fields = next(csv.reader([line]))
        if len(fields) != len(MANIFEST_COLUMNS):
            _fail(path, f"expected {len(MANIFEST_COLUMNS)} fields, found {len(fields)}", line=lineno)
        rows.append((lineno, [f.strip() for f in fields]))
    if not rows:
        _fail(path, "manifest lists no images")

    records = []
    seen_labels = []
    for lineno, (image_id, label, desc_path, mask_path) in rows:
        if not image_id:
            _fail(path, "empty image_id", line=lineno)
        if not desc_path:
            _fail(path, f"image {image_id!r} has no descriptor path", line=lineno)
        full = os.path.join(base, desc_path)
        if not os.path.exists(full):
            _fail(path, f"descriptor file not found: {desc_path}", line=lineno)
        descriptors = read_descriptors(full)
        mask = None
        if mask_path:
            mask_full = os.path.join(base, mask_path)
            if not os.path.exists(mask_full):
                _fail(path, f"mask file not found: {mask_path}", line=lineno)
            mask = read_pgm(mask_full)
        label = label or None
        if label is not None and label not in seen_labels:
            seen_labels.append(label)
        records.append(ImageRecord(image_id=image_id, label=label, descriptors=descriptors, mask=mask))

    label_set = declared if declared is not None else seen_labels
    dim = records[0].descriptors.shape[1]
    return Dataset(records=records, dim=dim, label_set=label_set)


def write_dataset(dataset, out_dir, binary=False):
    """Write every record's descriptors plus a manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    ext = "bin" if binary else "txt"
    lines = [f"# labels: {','.join(dataset.label_set)}", ",".join(MANIFEST_COLUMNS)]
    for rec in dataset.records:
        fname = f"{rec.image_id}.{ext}"
        target = os.path.join(out_dir, fname)
        if binary:
            write_descriptors_binary(target, rec.descriptors)
        else:
            write_descriptors(target, rec.descriptors)
        lines.append(f"{rec.image_id},{rec.label or ''},{fname},")
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


# -- masks, coordinates, config, predictions ---------------------------------

def read_pgm(path):
    """Read a PGM (P2 or P5) image as a region mask; nonzero means inside."""
    with open(path, "rb") as fh:
        blob = fh.read()

    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(blob):
            if blob[pos : pos + 1].isspace():
                pos += 1
            elif blob[pos : pos + 1] == b"#":
                while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            _fail(path, "unexpected end of file in header")
        return blob[start:pos]

    magic = next_token()
    if magic not in (b"P2", b"P5"):
        _fail(path, f"not a PGM file (magic {magic!r})")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError:
        _fail(path, "malformed PGM header")
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        _fail(path, f"invalid PGM geometry {width}x{height} maxval={maxval}")

    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        itemsize = 1 if maxval < 256 else 2
        need = count * itemsize
        payload = blob[pos : pos + need]
        if len(payload) != need:
            _fail(path, f"raster is {len(payload)} bytes, expected {need}")
        dtype = np.uint8 if itemsize == 1 else ">u2"
        values = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    else:
        try:
            values = np.array(blob[pos:].split(), dtype=np.int64)
        except ValueError:
            _fail(path, "malformed P2 raster")
        if values.size != count:
            _fail(path, f"raster has {values.size} samples, expected {count}")
    if values.size and (values.min() < 0 or values.max() > maxval):
        _fail(path, "raster sample out of range")
    return RegionMask(width=width, height=height, bitmap=(values != 0).reshape(height, width))


def read_coords(path):
    """Read point coordinates, one ``x,y`` pair per line."""
    try:
        pts = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        _fail(path, f"malformed coordinate file ({exc})")
    if pts.size == 0:
        _fail(path, "coordinate file lists no points")
    if pts.shape[1] != 2:
        _fail(path, f"expected 2 values per line, found {pts.shape[1]}")
    return pts


def read_config(path):
    """Read a ``key=value`` config file into a string dict."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                _fail(path, f"expected key=value, got {stripped!r}", line=lineno)
            key, _, value = stripped.partition("=")
            out[key.strip()] = value.strip()
    return out


def read_predictions(path):
    """Read external predictions keyed by (run, image_id)."""
    out = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [(i, row) for i, row in enumerate(reader, start=1) if row and not row[0].startswith("#")]
    if not rows:
        _fail(path, "prediction file is empty")
    header = [c.strip() for c in rows[0][1]]
    if header != ["run", "image_id", "predicted"]:
        _fail(path, "header must be run,image_id,predicted", line=rows[0][0])
    for lineno, row in rows[1:]:
        if len(row) != 3:
            _fail(path, f"expected 3 fields, found {len(row)}", line=lineno)
        try:
            run = int(row[0])
        except ValueError:
            _fail(path, f"run index {row[0]!r} is not an integer", line=lineno)
        out[(run, row[1].strip())] = row[2].strip()
    return out


def write_histograms(path, entries):
    """Write (image_id, label, counts) triples as one CSV feature table."""
    entries = list(entries)
    if not entries:
        raise DataError("nothing to write: no histograms")
    width = len(entries[0][2])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("image_id,label," + ",".join(f"word_{i}" for i in range(width)) + "\n")
        for image_id, label, counts in entries:
            if len(counts) != width:
                raise DataError(f"histogram width mismatch for image {image_id!r}")
            fh.write(f"{image_id},{label or ''}," + ",".join(str(int(c)) for c in counts) + "\n")


# -- reports -----------------------------------------------------------------

def write_report(path, report_dict):
    _dump_json(path, report_dict)


def _fmt_pct(value, std=None):
    if value is None:
        return "-"
    if std is None:
        return f"{100 * value:.1f}"
    return f"{100 * value:.1f}±{100 * std:.1f}"


def render_table(report_dict):
    """Render a report dict as an aligned text table."""
    kind = report_dict.get("kind")
    if kind == "experiment":
        agg = report_dict["aggregate"]
        cfg = report_dict["config"]
        rows = [
            ["builder", str(cfg["builder"])],
            ["size", str(cfg["size"])],
            ["classifier", str(cfg["classifier"])],
            ["completed runs", str(agg["completed_runs"])],
            ["failed runs", str(agg["failed_runs"])],
            ["mean accuracy %", _fmt_pct(agg["mean_accuracy"], agg["std_accuracy"])],
            ["mean sensitivity %", _fmt_pct(agg["mean_sensitivity"])],
            ["mean specificity %", _fmt_pct(agg["mean_specificity"])],
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows) + "\n"

    if kind == "sweep":
        sizes = report_dict["sizes"]
        cells = {(c["builder"], c["size"], c["classifier"]): c for c in report_dict["cells"]}
        header = ["builder", "classifier"] + [f"size={s}" for s in sizes]
        body = []
        for b in report_dict["builders"]:
            for c in report_dict["classifiers"]:
                row = [b, c]
                for s in sizes:
                    cell = cells.get((b, s, c))
                    row.append(_fmt_pct(cell["mean_accuracy"], cell["std_accuracy"]) if cell else "-")
                body.append(row)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header] + body]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    raise DataError(f"cannot render report of kind {kind!r}")
