"""
Reading and writing the files the management commands exchange.

Groups files are comma-separated 0/1 rows, one group per line, with an
optional header of node labels and an optional leading time column. A
first row is a header only when none of its cells is a number, so node
labels must not be numeric.
Parameter files are JSON documents; the theta diagonal is written as the
token ``"inf"``. Floats are written with ``repr`` so they read back
bit-identically.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .analysis import RawEvent, RawRecords
from .core import GroupedData, ModelParams
from .exceptions import FormatError, InvalidParameterError

PARAMS_FORMAT = "hub-model-params/1"
INF_TOKEN = "inf"


def _is_binary(cell):
    return cell.strip() in ("0", "1")


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_groups(path, timestamps=False):
    """Parse a groups file; errors name the 1-based line."""
    path = Path(path)
    rows = []
    labels = ()
    tags = []
    width = None
    with path.open(newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            tag = None
            if timestamps:
                tag, cells = cells[0], cells[1:]
            # a header row holds labels only; a numeric cell makes it data
            if not rows and not labels and not any(_is_number(c) for c in cells):
                labels = tuple(cells)
                width = len(labels)
                continue
            if width is None:
                width = len(cells)
            if len(cells) != width:
                raise FormatError(
                    f"expected {width} entries, found {len(cells)}",
                    line=line_no,
                    path=path,
                )
            bad = [c for c in cells if not _is_binary(c)]
            if bad:
                raise FormatError(
                    f"entries must be 0 or 1, found {bad[0]!r}", line=line_no, path=path
                )
            values = [int(c) for c in cells]
            if not any(values):
                raise FormatError("group is empty", line=line_no, path=path)
            rows.append(values)
            tags.append(tag)

    if not rows:
        raise FormatError("no groups found", path=path)
    try:
        return GroupedData(
            np.array(rows, dtype=np.int8),
            node_labels=labels,
            timestamps=tuple(tags) if timestamps else None,
        )
    except InvalidParameterError as exc:
        raise FormatError(str(exc), path=path) from exc


def write_groups(path, groups):
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = list(groups.node_labels)
        if groups.timestamps is not None:
            header = ["time"] + header
        writer.writerow(header)
        for t, row in enumerate(groups.G):
            cells = [str(int(v)) for v in row]
            if groups.timestamps is not None:
                cells = [groups.timestamps[t]] + cells
            writer.writerow(cells)


def read_raw_records(path):
    """
    Raw observations, one event per line::

        # nodes: Allison,Drew,Eliot
        2009-01-01 | Allison,Eliot
        2009-01-02 | Drew | Allison,Eliot

    Each ``|``-separated field after the time tag is a candidate group,
    given either as comma-separated labels or, when a roster is declared,
    as a comma-separated 0/1 vector of the roster's length. Without a
    roster the nodes are the labels in order of first appearance.
    """
    path = Path(path)
    roster = None
    parsed = []
    with path.open() as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                body = text[1:].strip()
                if body.lower().startswith("nodes:"):
                    roster = [
                        label.strip()
                        for label in body.split(":", 1)[1].split(",")
                        if label.strip()
                    ]
                    if not roster:
                        raise FormatError("empty node roster", line=line_no, path=path)
                continue
            fields = [f.strip() for f in text.split("|")]
            if len(fields) < 2 or not fields[0]:
                raise FormatError(
                    "expected 'time | group [| group ...]'", line=line_no, path=path
                )
            candidates = []
            for field in fields[1:]:
                items = [item.strip() for item in field.split(",") if item.strip()]
                if not items:
                    raise FormatError("empty candidate group", line=line_no, path=path)
                candidates.append(items)
            parsed.append((line_no, fields[0], candidates))

    if not parsed:
        raise FormatError("no events found", path=path)

    labels = list(roster) if roster is not None else []
    index = {label: k for k, label in enumerate(labels)}
    if roster is None:
        for _, _, candidates in parsed:
            for items in candidates:
                for item in items:
                    if item not in index:
                        index[item] = len(labels)
                        labels.append(item)

    events = []
    n = len(labels)
    for line_no, tag, candidates in parsed:
        vectors = []
        for items in candidates:
            vector = np.zeros(n, dtype=np.int8)
            if roster is not None and len(items) == n and all(map(_is_binary, items)):
                vector[:] = [int(item) for item in items]
            else:
                unknown = [item for item in items if item not in index]
                if unknown:
                    raise FormatError(
                        f"unknown node {unknown[0]!r}", line=line_no, path=path
                    )
                vector[[index[item] for item in items]] = 1
            if not vector.any():
                raise FormatError("empty candidate group", line=line_no, path=path)
            vectors.append(vector)
        events.append(RawEvent(tag, tuple(vectors)))
    return RawRecords(tuple(events), tuple(labels))


def _encode_theta(theta):
    rows = []
    for i, row in enumerate(theta):
        cells = [float(v) for v in row]
        cells[i] = INF_TOKEN
        rows.append(cells)
    return rows


def _decode_theta(rows, path):
    try:
        theta = np.array(
            [[np.inf if v == INF_TOKEN else float(v) for v in row] for row in rows],
            dtype=np.float64,
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed theta: {exc}", path=path) from exc
    return theta


def params_document(params, node_labels=(), **extra):
    labels = list(node_labels) or [f"v{i + 1}" for i in range(params.n)]
    document = {
        "format": PARAMS_FORMAT,
        "n": params.n,
        "node_labels": labels,
        "u": [float(v) for v in params.u],
        "theta": _encode_theta(params.theta),
        "alpha": params.alpha,
        "beta": params.beta,
        "gamma": params.gamma,
        "theta_max": params.theta_max,
    }
    document.update(extra)
    return document


def params_from_document(document, path=None):
    try:
        params = ModelParams(
            u=document["u"],
            theta=_decode_theta(document["theta"], path),
            alpha=document.get("alpha", 0.0),
            beta=document.get("beta", 0.0),
            gamma=document.get("gamma", 0.0),
            theta_max=document.get("theta_max", 30.0),
        )
    except KeyError as exc:
        raise FormatError(f"missing key {exc.args[0]!r}", path=path) from exc
    except InvalidParameterError as exc:
        raise FormatError(str(exc), path=path) from exc
    return params


def write_params(path, params, node_labels=(), **extra):
    document = params_document(params, node_labels, **extra)
    Path(path).write_text(json.dumps(document, indent=2) + "\n")


def read_params(path):
    """Return ``(params, document)``; the document keeps any extra keys."""
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, line=exc.lineno, path=path) from exc
    if document.get("format") != PARAMS_FORMAT:
        raise FormatError(f"not a {PARAMS_FORMAT} document", path=path)
    return params_from_document(document, path), document


def write_matrix(path, matrix, fmt="%.17g"):
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt=fmt)


def write_labels(directory, labels):
    Path(directory, "labels.txt").write_text("\n".join(labels) + "\n")


def write_leaders(path, leaders, labels, segment_starts=None):
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = ["t", "leader", "leader_index"]
        if segment_starts is not None:
            header.append("segment_start")
        writer.writerow(header)
        starts = set(segment_starts or ())
        for t, leader in enumerate(leaders):
            row = [t, labels[leader], int(leader)]
            if segment_starts is not None:
                row.append(int(t in starts))
            writer.writerow(row)


def write_rows(path, header, rows):
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path, document):
    Path(path).write_text(json.dumps(document, indent=2, default=str) + "\n")
