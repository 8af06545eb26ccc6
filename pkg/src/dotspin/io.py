"""File formats: pattern JSON, observation/orientation/spin CSV, manifests.

Floats are serialized with ``repr`` (shortest round-trip form) so that
identical inputs always produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FileFormatError, OutsideDisk
from .geometry import Rotation
from .hashing import DotPattern, HashTable, ObservedDotSet, build_hash_table, lift_to_sphere
from .kent import ScoringParams
from .spin import OrientationSample
from .synth import GroundTruthFrame


# --- pattern JSON -----------------------------------------------------

def _f(x) -> str:
    # shortest round-trip decimal; plain float keeps numpy scalars out of repr
    return repr(float(x))


def write_pattern(pattern: DotPattern, path) -> None:
    payload = {
        "n": len(pattern),
        "dots": [[float(c) for c in d] for d in pattern.dots],
        "id": pattern.id,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_builtin_pattern(name: str = "optimized_20") -> DotPattern:
    """Load a pattern shipped with the package (default: the optimized 20-dot layout)."""
    ref = resources.files("dotspin.data").joinpath(f"{name}.json")
    payload = json.loads(ref.read_text())
    return DotPattern(np.asarray(payload["dots"], dtype=float),
                      id=str(payload.get("id", "")))


def read_pattern(path) -> DotPattern:
    try:
        payload = json.loads(Path(path).read_text())
        dots = np.asarray(payload["dots"], dtype=float)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: not a valid pattern file ({exc})") from exc
    if "n" in payload and int(payload["n"]) != len(dots):
        raise FileFormatError(f"{path}: dot count does not match field 'n'")
    return DotPattern(dots, id=str(payload.get("id", "")))


# --- hash table npz ----------------------------------------------------

def write_table(table: HashTable, path) -> None:
    np.savez(
        path,
        dots=table.pattern.dots,
        pattern_id=np.array(table.pattern.id),
        kappa=table.params.kappa,
        beta=table.params.beta,
        alpha=table.params.alpha,
    )


def read_table(path) -> HashTable:
    try:
        data = np.load(path, allow_pickle=False)
        pattern = DotPattern(data["dots"], id=str(data["pattern_id"]))
        params = ScoringParams(float(data["kappa"]), float(data["beta"]),
                               float(data["alpha"]))
    except (OSError, KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: not a valid table file ({exc})") from exc
    return build_hash_table(pattern, params)


# --- observation CSV ----------------------------------------------------

def write_observations(frames: list[GroundTruthFrame], path) -> None:
    """Observation CSV: header frame,t,X,Y,Z; one row per dot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "t", "X", "Y", "Z"])
        for k, frame in enumerate(frames):
            for d in frame.observed.dots:
                w.writerow([k, _f(frame.t), _f(d[0]), _f(d[1]), _f(d[2])])


def write_ground_truth(frames: list[GroundTruthFrame], path) -> None:
    """Sibling truth CSV: t,qw,qx,qy,qz,visible_ids (ids ';'-joined)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "qw", "qx", "qy", "qz", "visible_ids"])
        for frame in frames:
            q = frame.q_true.q
            w.writerow([_f(frame.t)] + [_f(c) for c in q]
                       + [";".join(str(i) for i in frame.visible_ids)])


def read_observations(path) -> list[tuple[str, ObservedDotSet]]:
    """Parse an observation CSV into (frame id, dot set) groups.

    Accepts either lifted rows ``frame,t,X,Y,Z`` or image-plane rows
    ``frame,t,x,y`` in ball-radius units (lifted here with r = 1). An
    optional trailing ``conf`` column is tolerated and ignored.
    """
    groups: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path}: empty file")
        cols = [c.strip().lower() for c in header]
        if cols[:2] != ["frame", "t"]:
            raise FileFormatError(f"{path}: line 1: header must start with frame,t")
        has_z = "z" in cols
        want = 5 if has_z else 4
        if cols[2:want] != (["x", "y", "z"] if has_z else ["x", "y"]):
            raise FileFormatError(f"{path}: line 1: unrecognized columns {header}")

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < want:
                raise FileFormatError(f"{path}: line {lineno}: expected {want} columns")
            try:
                frame_id = row[0].strip()
                t = float(row[1])
                vals = [float(c) for c in row[2:want]]
            except ValueError as exc:
                raise FileFormatError(f"{path}: line {lineno}: {exc}") from exc
            if has_z:
                dot = np.asarray(vals)
                n = np.linalg.norm(dot)
                if abs(n - 1.0) > 1e-6:
                    raise FileFormatError(
                        f"{path}: line {lineno}: lifted dot is not unit length")
            else:
                try:
                    dot = lift_to_sphere(vals, r=1.0)
                except OutsideDisk as exc:
                    raise FileFormatError(f"{path}: line {lineno}: {exc}") from exc
            g = groups.setdefault(frame_id, {"t": t, "dots": []})
            g["dots"].append(dot)

    out = []
    for frame_id, g in groups.items():
        out.append((frame_id, ObservedDotSet(np.array(g["dots"]), timestamp=g["t"])))
    return out


# --- orientation CSV ------------------------------------------------------

ORIENT_HEADER = ["frame", "t", "qw", "qx", "qy", "qz", "rmse",
                 "n_dots", "n_matched", "status"]


def write_orientations(rows: list[dict], path) -> None:
    """Recognition output CSV; one row per input frame."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ORIENT_HEADER)
        for r in rows:
            w.writerow([
                r["frame"], _f(r["t"]),
                *(_f(r.get(k, float("nan"))) for k in ("qw", "qx", "qy", "qz", "rmse")),
                int(r.get("n_dots", 0)), int(r.get("n_matched", 0)),
                r["status"],
            ])


def read_orientation_sequence(path) -> list[OrientationSample]:
    """Read orientation samples for the spin stage.

    Accepts the minimal schema ``t,qw,qx,qy,qz[,rmse]`` or the recognition
    output schema (rows with a non-``ok`` status are skipped).
    """
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise FileFormatError(f"{path}: empty file")
        try:
            it, iq = header.index("t"), header.index("qw")
        except ValueError:
            raise FileFormatError(f"{path}: line 1: need columns t and qw..qz")
        istatus = header.index("status") if "status" in header else None
        irmse = header.index("rmse") if "rmse" in header else None

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if istatus is not None and row[istatus].strip() != "ok":
                continue
            try:
                t = float(row[it])
                q = Rotation(np.array([float(row[iq + k]) for k in range(4)]))
                rmse = float(row[irmse]) if irmse is not None else None
            except (ValueError, IndexError) as exc:
                raise FileFormatError(f"{path}: line {lineno}: {exc}") from exc
            samples.append(OrientationSample(t=t, q=q, quality=rmse))
    samples.sort(key=lambda s: s.t)
    return samples


# --- spin CSV / dampening JSON ---------------------------------------------

SPIN_HEADER = ["wx", "wy", "wz", "mag_rps", "n_inliers", "residual_rms", "status"]


def write_spin(path, estimate=None, status: str = "ok") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPIN_HEADER)
        if estimate is None:
            w.writerow(["", "", "", "", "", "", status])
        else:
            mag_rps = float(np.linalg.norm(estimate.omega)) / (2.0 * np.pi)
            w.writerow([_f(c) for c in estimate.omega]
                       + [_f(mag_rps), len(estimate.inliers),
                          _f(estimate.residual_rms), status])


def read_norm_series(path) -> list[tuple[float, float]]:
    """Spin-norm series CSV with header ``t,omega`` (omega in rad/s)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise FileFormatError(f"{path}: empty file")
        if header[:2] != ["t", "omega"]:
            raise FileFormatError(f"{path}: line 1: header must be t,omega")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                out.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise FileFormatError(f"{path}: line {lineno}: {exc}") from exc
    return out


def write_norm_series(series, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "omega"])
        for t, v in series:
            w.writerow([_f(t), _f(v)])


def write_json(payload: dict, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc})") from exc
