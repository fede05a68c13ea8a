"""File formats: panel-data CSV, chain CSV, truth files, run manifests.

Floats are rendered with repr so every file round-trips bit for bit; all
writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .mcmc import Chain
from .model import ModelSpec, ParameterLayout
from .records import SubjectRecord, Visit

PANEL_COLUMNS = ["subject_id", "age", "male", "educ", "apoe4", "pib",
                 "thickness", "mmse", "ntests", "dem", "event",
                 "observed_state"]

_RESPONSE_COLUMNS = ("pib", "thickness", "mmse", "dem", "observed_state")


class PanelFormatError(ValueError):
    pass


def _atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Panel data
# ---------------------------------------------------------------------------

def write_panel_csv(subjects, path):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(PANEL_COLUMNS)
    for s in subjects:
        for v in s.visits:
            w.writerow([
                s.id, _fmt(v.age), _fmt(s.cov.get("male")),
                _fmt(s.cov.get("educ")), _fmt(s.cov.get("apoe4")),
                _fmt(v.responses.get("pib")), _fmt(v.responses.get("thickness")),
                _fmt(v.responses.get("mmse")), _fmt(v.ntests),
                _fmt(v.responses.get("dem")), "visit",
                _fmt(v.responses.get("observed_state")),
            ])
        if s.died_at is not None:
            w.writerow([s.id, _fmt(s.died_at), _fmt(s.cov.get("male")),
                        _fmt(s.cov.get("educ")), _fmt(s.cov.get("apoe4")),
                        "", "", "", "", "", "death", ""])
    _atomic_write(path, buf.getvalue())


def _parse_float(row, col, line, violations):
    raw = row.get(col, "")
    if raw is None or raw == "":
        return None
    try:
        v = float(raw)
    except ValueError:
        violations.append(f"line {line}: malformed {col} value {raw!r}")
        return None
    if not np.isfinite(v):
        violations.append(f"line {line}: non-finite {col}")
        return None
    return v


def scan_panel_csv(path, spec: ModelSpec):
    """Parse and structurally check a panel file.

    Returns (subjects, violations); subjects are best-effort and only safe to
    use when the violation list is empty.
    """
    violations: list[str] = []
    order: list[str] = []
    rows_by_subject: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "subject_id" not in reader.fieldnames:
            return [], ["line 1: missing header with subject_id column"]
        unknown = set(reader.fieldnames) - set(PANEL_COLUMNS)
        if unknown:
            violations.append(f"line 1: unknown columns {sorted(unknown)}")
        for line, row in enumerate(reader, start=2):
            sid = row.get("subject_id") or ""
            if not sid:
                violations.append(f"line {line}: empty subject_id")
                continue
            if sid not in rows_by_subject:
                rows_by_subject[sid] = []
                order.append(sid)
            event = (row.get("event") or "visit").strip()
            if event not in ("visit", "death"):
                violations.append(f"line {line}: event must be visit or death, got {event!r}")
                continue
            age = _parse_float(row, "age", line, violations)
            if age is None:
                violations.append(f"line {line}: missing age")
                continue
            parsed = {"line": line, "event": event, "age": age}
            for col in ("male", "educ", "apoe4", "pib", "thickness", "mmse",
                        "ntests", "dem", "observed_state"):
                parsed[col] = _parse_float(row, col, line, violations)
            if event == "death":
                present = [c for c in _RESPONSE_COLUMNS if parsed[c] is not None]
                if present:
                    violations.append(
                        f"line {line}: death row for subject {sid} carries responses {present}")
            else:
                if parsed["pib"] is not None and parsed["pib"] <= 1.0:
                    violations.append(
                        f"line {line}: pib={parsed['pib']} is incompatible with the "
                        "log(pib-1) transform (requires pib > 1)")
                for col in ("male", "apoe4", "dem"):
                    if parsed[col] is not None and parsed[col] not in (0.0, 1.0):
                        violations.append(f"line {line}: {col} must be 0 or 1")
                if parsed["observed_state"] is not None:
                    o = parsed["observed_state"]
                    if o != int(o) or not (1 <= int(o) <= spec.n_states):
                        violations.append(f"line {line}: observed_state {o} outside 1..{spec.n_states}")
            rows_by_subject[sid].append(parsed)

    subjects = []
    for sid in order:
        rows = rows_by_subject[sid]
        deaths = [r for r in rows if r["event"] == "death"]
        if len(deaths) > 1:
            violations.append(
                f"line {deaths[1]['line']}: subject {sid} has more than one death row")
        for a, b in zip(rows, rows[1:]):
            if b["age"] <= a["age"]:
                violations.append(
                    f"line {b['line']}: subject {sid} rows not strictly increasing in age")
            if a["event"] == "death":
                violations.append(
                    f"line {b['line']}: subject {sid} has a row after the death row")
        visit_rows = [r for r in rows if r["event"] == "visit"]
        if not visit_rows:
            violations.append(f"subject {sid}: no clinical visits")
            continue
        if visit_rows[0]["age"] < spec.baseline_age:
            violations.append(
                f"line {visit_rows[0]['line']}: subject {sid} enrolled before the "
                f"baseline age {spec.baseline_age}")
        covs = {(r["male"], r["educ"], r["apoe4"]) for r in rows}
        if len(covs) > 1:
            violations.append(f"subject {sid}: covariates vary across rows")
        cov = {}
        for name in ("male", "educ", "apoe4"):
            val = visit_rows[0][name]
            if val is not None:
                cov[name] = val
        visits = []
        for r in visit_rows:
            responses = {c: r[c] for c in _RESPONSE_COLUMNS if r[c] is not None}
            visits.append(Visit(r["age"], responses, ntests=r["ntests"]))
        died_at = deaths[0]["age"] if deaths else None
        subjects.append(SubjectRecord(sid, cov, visits, died_at=died_at))
    return subjects, violations


def read_panel_csv(path, spec: ModelSpec):
    subjects, violations = scan_panel_csv(path, spec)
    if violations:
        raise PanelFormatError("; ".join(violations[:5]) +
                               (f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""))
    if not subjects:
        raise PanelFormatError("no subjects in file")
    return subjects


# ---------------------------------------------------------------------------
# Chains, truth files, manifests
# ---------------------------------------------------------------------------

def write_chain_csv(chain: Chain, path):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(list(chain.names) + ["log_posterior"])
    for row, lp in zip(chain.draws, chain.log_posterior):
        w.writerow([repr(float(x)) for x in row] + [repr(float(lp))])
    _atomic_write(path, buf.getvalue())


def read_chain_csv(path):
    """Returns (names, draws, log_posterior)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "log_posterior":
            raise PanelFormatError(f"{path}: not a chain file")
        names = tuple(header[:-1])
        rows = [[float(x) for x in row] for row in reader]
    arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        return names, np.empty((0, len(names))), np.empty(0)
    return names, arr[:, :-1], arr[:, -1]


def write_truth_params_csv(layout: ParameterLayout, u, path):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["name", "value"])
    for name, val in zip(layout.names, u):
        w.writerow([name, repr(float(val))])
    _atomic_write(path, buf.getvalue())


def read_truth_params_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["name"]: float(row["value"]) for row in reader}


def write_truth_paths_csv(truths, path):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["subject_id", "state", "entry_age"])
    for t in truths:
        for state, entry in t.path:
            w.writerow([t.subject_id, state, repr(float(entry))])
    _atomic_write(path, buf.getvalue())


def write_manifest(path, **fields):
    _atomic_write(path, json.dumps(fields, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
