"""Expression matrix container, standardization, and TSV readers/writers."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd


class MatrixParseError(ValueError):
    pass


class MatrixValidationError(ValueError):
    pass


def _check_ids(ids, kind):
    seen = set()
    for x in ids:
        if not isinstance(x, str) or x == "":
            raise MatrixValidationError(f"empty {kind} id")
        if any(ch.isspace() for ch in x):
            raise MatrixValidationError(f"{kind} id {x!r} contains whitespace")
        if x in seen:
            raise MatrixValidationError(f"duplicated {kind} id {x!r}")
        seen.add(x)


@dataclass(frozen=True)
class ExpressionMatrix:
    """Features in rows, samples in columns. Immutable after construction."""

    feature_ids: tuple
    sample_ids: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        _check_ids(self.feature_ids, "feature")
        _check_ids(self.sample_ids, "sample")
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise MatrixValidationError("values must be a 2-D array")
        if values.shape != (len(self.feature_ids), len(self.sample_ids)):
            raise MatrixValidationError(
                f"values shape {values.shape} does not match "
                f"{len(self.feature_ids)} features x {len(self.sample_ids)} samples"
            )
        bad = ~np.isfinite(values)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise MatrixValidationError(
                f"non-finite value {values[i, j]} at feature {self.feature_ids[i]!r}, "
                f"sample {self.sample_ids[j]!r}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_features(self):
        return self.values.shape[0]

    @property
    def n_samples(self):
        return self.values.shape[1]

    def to_frame(self):
        return pd.DataFrame(self.values, index=list(self.feature_ids), columns=list(self.sample_ids))

    @classmethod
    def from_frame(cls, df):
        return cls([str(x) for x in df.index], [str(x) for x in df.columns], df.to_numpy(dtype=float))

    def take_samples(self, order):
        order = list(order)
        return ExpressionMatrix(self.feature_ids, [self.sample_ids[j] for j in order], self.values[:, order])

    def take_features(self, order):
        order = list(order)
        return ExpressionMatrix([self.feature_ids[i] for i in order], self.sample_ids, self.values[order])


def zscore_rows(m):
    """Row-wise standardization with population std; constant rows become zeros."""
    x = m.values
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    std = np.sqrt((centered**2).mean(axis=1, keepdims=True))
    # relative tolerance: rows that are constant up to rounding
    const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    z = np.divide(centered, std, out=np.zeros_like(centered), where=~const)
    return ExpressionMatrix(m.feature_ids, m.sample_ids, z)


def _open_text(path):
    return open(path, "r", encoding="utf-8", newline=None)


def read_matrix(path):
    path = Path(path)
    with _open_text(path) as fh:
        header = fh.readline()
        if not header:
            raise MatrixParseError(f"{path}: empty file")
        cols = header.rstrip("\r\n").split("\t")
        if len(cols) < 2 or cols[0] != "":
            raise MatrixParseError(f"{path}: line 1: header must start with an empty field")
        sample_ids = cols[1:]
        n = len(sample_ids)
        feature_ids, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != n + 1:
                raise MatrixParseError(
                    f"{path}: line {lineno}: expected {n + 1} fields, found {len(fields)}"
                )
            try:
                row = np.array(fields[1:], dtype=np.float64)
            except ValueError:
                for j, cell in enumerate(fields[1:], start=1):
                    try:
                        float(cell)
                    except ValueError:
                        raise MatrixParseError(
                            f"{path}: line {lineno} (row {lineno - 1}, column {j}): "
                            f"non-numeric value {cell!r}"
                        ) from None
                raise
            feature_ids.append(fields[0])
            rows.append(row)
    values = np.vstack(rows) if rows else np.zeros((0, n))
    return ExpressionMatrix(feature_ids, sample_ids, values)


def read_header_ids(path):
    """Sample ids and feature ids of a matrix file without parsing the numbers."""
    with _open_text(path) as fh:
        sample_ids = fh.readline().rstrip("\r\n").split("\t")[1:]
        feature_ids = [line.split("\t", 1)[0] for line in fh if line.strip("\r\n")]
    return feature_ids, sample_ids


def write_matrix(path, m):
    # repr() gives the shortest string that round-trips the float exactly
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t" + "\t".join(m.sample_ids) + "\n")
        for fid, row in zip(m.feature_ids, m.values.tolist()):
            fh.write(fid + "\t" + "\t".join(map(repr, row)) + "\n")


def fmt_real(x):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


BICLUSTER_COLUMNS = ("id", "snr", "direction", "n_features", "n_samples", "features", "samples")


def write_biclusters(path, biclusters, feature_ids, sample_ids):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(BICLUSTER_COLUMNS) + "\n")
        for i, b in enumerate(biclusters):
            feats = []
            for f in sorted(b.features, key=lambda f: feature_ids[f]):
                prefix = "-" if b.direction == "mixed" and b.signs.get(f, 1) < 0 else ""
                feats.append(prefix + feature_ids[f])
            samples = [sample_ids[s] for s in sorted(b.samples)]
            fh.write(
                "\t".join(
                    [
                        str(i),
                        fmt_real(b.snr),
                        b.direction,
                        str(len(b.features)),
                        str(len(b.samples)),
                        " ".join(feats),
                        " ".join(samples),
                    ]
                )
                + "\n"
            )


def read_biclusters(path, feature_ids, sample_ids):
    """Parse a bicluster TSV back into Bicluster objects indexed against the given ids."""
    from .assembly import Bicluster

    f_index = {f: i for i, f in enumerate(feature_ids)}
    s_index = {s: i for i, s in enumerate(sample_ids)}
    out = []
    with _open_text(path) as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
        if tuple(header) != BICLUSTER_COLUMNS:
            raise MatrixParseError(f"{path}: unexpected bicluster header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != len(BICLUSTER_COLUMNS):
                raise MatrixParseError(f"{path}: line {lineno}: expected 7 fields")
            _, snr, direction, _, _, feats, samples = fields
            features, signs = set(), {}
            for tok in feats.split():
                sign = 1
                if tok not in f_index and tok.startswith("-") and tok[1:] in f_index:
                    tok, sign = tok[1:], -1
                if tok not in f_index:
                    raise MatrixValidationError(f"{path}: line {lineno}: unknown feature {tok!r}")
                features.add(f_index[tok])
                signs[f_index[tok]] = sign
            try:
                sample_set = frozenset(s_index[s] for s in samples.split())
            except KeyError as e:
                raise MatrixValidationError(f"{path}: line {lineno}: unknown sample {e.args[0]!r}") from None
            out.append(
                Bicluster(
                    features=frozenset(features),
                    signs=signs,
                    samples=sample_set,
                    direction=direction,
                    snr=float(snr),
                )
            )
    return out


def write_truth(path, truth, sample_ids):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name, members in truth.sets:
            fh.write(name + "\t" + " ".join(sample_ids[s] for s in sorted(members)) + "\n")


def read_truth(path, sample_ids):
    from .evaluation import GroundTruth

    s_index = {s: i for i, s in enumerate(sample_ids)}
    sets = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            name, _, members = line.partition("\t")
            try:
                sets.append((name, frozenset(s_index[s] for s in members.split())))
            except KeyError as e:
                raise MatrixValidationError(f"{path}: line {lineno}: unknown sample {e.args[0]!r}") from None
    return GroundTruth(sets, len(sample_ids))


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
