"""Cohort files.

Layout::

    manifest.csv            patient_id,os_months,event   (event 1 = death observed)
    group_spec.csv          group_name,dim
    features/<id>.pfm       16-byte header (b"PFM1", u32 K, u32 d_i, 4 zero bytes),
                            then K*d_i little-endian float32, row-major
    genomics/<id>.csv       one row per group: name,v1;v2;...;v_d
"""
import logging
import struct
from pathlib import Path

import numpy as np

from ..embedders import PATCH_DIM, GenomicsGroupSpec
from ..survival import SurvivalRecord
from .cohort import Cohort, IntegrityError, Patient

log = logging.getLogger(__name__)

PFM_MAGIC = b"PFM1"
PFM_HEADER = struct.Struct("<4sII4s")


class CohortParseError(ValueError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path} (byte {offset}): {message}")
        self.path = str(path)
        self.offset = offset


def _lines(path):
    """Yield (byte_offset, decoded line without newline)."""
    data = Path(path).read_bytes()
    offset = 0
    for raw in data.splitlines(keepends=True):
        yield offset, raw.decode("utf-8").rstrip("\r\n")
        offset += len(raw)


def write_pfm(path, features):
    features = np.asarray(features)
    k, d = features.shape
    with open(path, "wb") as fh:
        fh.write(PFM_HEADER.pack(PFM_MAGIC, k, d, b"\0\0\0\0"))
        fh.write(features.astype("<f4").tobytes(order="C"))


def read_pfm(path):
    data = Path(path).read_bytes()
    if len(data) < PFM_HEADER.size:
        raise CohortParseError(path, len(data), f"truncated header ({len(data)} < 16 bytes)")
    magic, k, d, reserved = PFM_HEADER.unpack_from(data)
    if magic != PFM_MAGIC:
        raise CohortParseError(path, 0, f"bad magic {magic!r}")
    if d != PATCH_DIM:
        raise CohortParseError(path, 8, f"feature dim {d} != {PATCH_DIM}")
    if reserved != b"\0\0\0\0":
        raise CohortParseError(path, 12, "reserved header bytes are not zero")
    if k < 1:
        raise CohortParseError(path, 4, "patch count K must be >= 1")
    expected = PFM_HEADER.size + 4 * k * d
    if len(data) != expected:
        raise CohortParseError(
            path, min(len(data), expected),
            f"header says K={k} (payload {4 * k * d} bytes) but file has {len(data) - PFM_HEADER.size}")
    values = np.frombuffer(data, dtype="<f4", offset=PFM_HEADER.size).reshape(k, d)
    out = values.astype(np.float64)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out.reshape(-1)))[0])
        raise CohortParseError(path, PFM_HEADER.size + 4 * bad, "non-finite patch feature")
    return out


def _fmt(x):
    return repr(float(x))


def write_group_spec(path, specs):
    with open(path, "w", newline="\n") as fh:
        fh.write("group_name,dim\n")
        for s in specs:
            fh.write(f"{s.name},{s.dim}\n")


def read_group_spec(path):
    specs = []
    for n, (offset, line) in enumerate(_lines(path)):
        if n == 0:
            if line.strip() != "group_name,dim":
                raise CohortParseError(path, offset, f"expected header 'group_name,dim', got {line!r}")
            continue
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            name, dim = parts[0].strip(), int(parts[1])
            if len(parts) != 2 or not name:
                raise ValueError
            specs.append(GenomicsGroupSpec(name, dim))
        except (ValueError, IndexError):
            raise CohortParseError(path, offset, f"malformed group spec row {line!r}") from None
    if not specs:
        raise CohortParseError(path, 0, "group spec lists no groups")
    return specs


def write_genomics(path, genomics, specs):
    with open(path, "w", newline="\n") as fh:
        for s in specs:
            fh.write(s.name + "," + ";".join(_fmt(v) for v in genomics[s.name]) + "\n")


def read_genomics(path, specs):
    dims = {s.name: s.dim for s in specs}
    out = {}
    for offset, line in _lines(path):
        if not line.strip():
            continue
        name, sep, payload = line.partition(",")
        if not sep or name not in dims:
            raise CohortParseError(path, offset, f"unknown or malformed genomics row {line[:40]!r}")
        try:
            values = np.array([float(v) for v in payload.split(";")], dtype=np.float64)
        except ValueError:
            raise CohortParseError(path, offset, f"non-numeric value in group {name!r}") from None
        if values.shape != (dims[name],):
            raise CohortParseError(path, offset, f"group {name!r} has {len(values)} values, expected {dims[name]}")
        if not np.all(np.isfinite(values)):
            raise CohortParseError(path, offset, f"non-finite value in group {name!r}")
        if name in out:
            raise CohortParseError(path, offset, f"group {name!r} listed twice")
        out[name] = values
    return out


def write_cohort(cohort, out_dir):
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "genomics").mkdir(parents=True, exist_ok=True)
    write_group_spec(out_dir / "group_spec.csv", cohort.group_specs)
    with open(out_dir / "manifest.csv", "w", newline="\n") as fh:
        fh.write("patient_id,os_months,event\n")
        for p in cohort.patients:
            fh.write(f"{p.patient_id},{_fmt(p.os_months)},{p.event}\n")
    for p in cohort.patients:
        write_pfm(out_dir / "features" / f"{p.patient_id}.pfm", p.features)
        write_genomics(out_dir / "genomics" / f"{p.patient_id}.csv", p.genomics, cohort.group_specs)
    return out_dir


def load_cohort(manifest_path, features_dir, genomics_dir, group_spec_path):
    """Read a cohort; pass ``None`` for a modality directory to load without it.

    Patients lacking a file for a loaded modality, or lacking survival
    fields, are dropped and logged.
    """
    specs = read_group_spec(group_spec_path)
    features_dir = None if features_dir is None else Path(features_dir)
    genomics_dir = None if genomics_dir is None else Path(genomics_dir)
    modalities = tuple(m for m, d in (("image", features_dir), ("genomics", genomics_dir)) if d is not None)
    rows, seen = [], set()
    for n, (offset, line) in enumerate(_lines(manifest_path)):
        if n == 0:
            if line.strip() != "patient_id,os_months,event":
                raise CohortParseError(manifest_path, offset,
                                       f"expected header 'patient_id,os_months,event', got {line!r}")
            continue
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or not parts[0]:
            raise CohortParseError(manifest_path, offset, f"expected 3 fields, got {line!r}")
        pid = parts[0]
        if pid in seen:
            raise IntegrityError(f"{manifest_path}: duplicate patient id {pid!r} (byte {offset})")
        seen.add(pid)
        rows.append((offset, parts))

    patients, dropped = [], []
    for offset, (pid, os_raw, event_raw) in rows:
        if os_raw == "" or event_raw == "":
            dropped.append((pid, "missing survival ground truth"))
            continue
        try:
            record = SurvivalRecord(pid, float(os_raw), int(event_raw))
        except ValueError as exc:
            raise CohortParseError(manifest_path, offset, f"bad survival fields for {pid!r}: {exc}") from None
        feats, genomics = None, {}
        if features_dir is not None:
            fpath = features_dir / f"{pid}.pfm"
            if not fpath.exists():
                dropped.append((pid, "missing patch features"))
                continue
            feats = read_pfm(fpath)
            if feats.shape[0] < len(specs):
                raise CohortParseError(fpath, 4, f"K={feats.shape[0]} patches < N={len(specs)} groups")
        if genomics_dir is not None:
            gpath = genomics_dir / f"{pid}.csv"
            if not gpath.exists():
                dropped.append((pid, "missing genomics"))
                continue
            genomics = read_genomics(gpath, specs)
            missing = [s.name for s in specs if s.name not in genomics]
            if missing:
                dropped.append((pid, f"missing genomics groups {missing}"))
                continue
        patients.append(Patient(pid, feats, genomics, record))

    if dropped:
        log.warning("dropped %d of %d patients: %s", len(dropped), len(rows),
                    "; ".join(f"{pid} ({why})" for pid, why in dropped))
    return Cohort(patients, specs, dropped, modalities)


def load_cohort_dir(root):
    root = Path(root)
    return load_cohort(root / "manifest.csv", root / "features", root / "genomics", root / "group_spec.csv")
