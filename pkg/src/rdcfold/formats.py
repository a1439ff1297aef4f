"""Plain-text file formats: RDC data, angle lists, beams, coordinates, tables.

Every writer has a matching parser and the pair round-trips losslessly for
values written by this package (scores and angles use 9 significant digits;
RDC values use ``repr`` so that synthetic data survive exactly).
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .beam import Beam
from .exceptions import ParseError, ValidationError
from .filters import RamachandranTable, Rectangle, ScalarCouplingRecord
from .geometry import ATOM_NAMES, BackboneChain, DihedralPair, canonical_vector_type
from .rdc import RdcRecord

COORD_HEADER = "# rdc-fold backbone N={n}"


def _g9(x: float) -> str:
    return f"{x:.9g}"


def _data_lines(path) -> Iterable[tuple[int, list[str]]]:
    """Yield (line number, tokens) for non-blank, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if text:
                yield no, text.split()


def _number(token: str, kind, path, no: int, what: str):
    try:
        value = kind(token)
    except ValueError:
        raise ParseError(f"bad {what} {token!r}", path=str(path),
                         line_number=no) from None
    if kind is float and not math.isfinite(value):
        raise ParseError(f"non-finite {what} {token!r}", path=str(path),
                         line_number=no)
    return value


# RDC data -------------------------------------------------------------------

def parse_rdc_file(path) -> list[RdcRecord]:
    """Read ``res_index vector_type medium_id value [error]`` lines."""
    records = []
    for no, tok in _data_lines(path):
        if len(tok) not in (4, 5):
            raise ParseError(f"expected 4 or 5 fields, got {len(tok)}",
                             path=str(path), line_number=no)
        res = _number(tok[0], int, path, no, "residue index")
        try:
            vtype = canonical_vector_type(tok[1])
        except ValidationError:
            raise ParseError(f"unknown vector type {tok[1]!r}", path=str(path),
                             line_number=no) from None
        medium = _number(tok[2], int, path, no, "medium id")
        value = _number(tok[3], float, path, no, "RDC value")
        error = _number(tok[4], float, path, no, "RDC error") if len(tok) == 5 else 1.0
        try:
            records.append(RdcRecord(res, vtype, medium, value, error))
        except ValidationError as exc:
            raise ParseError(str(exc), path=str(path), line_number=no) from None
    return records


def write_rdc_file(path, records: Iterable[RdcRecord]) -> None:
    lines = ["# res_index vector_type medium_id value error"]
    for r in records:
        lines.append(f"{r.residue_index} {r.vector_type} {r.medium_id} {r.value!r} {r.error!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# angle lists ------------------------------------------------------------------

def write_angle_list(path, candidates) -> None:
    lines = [f"# pair {candidates.pair_index} resolution {_g9(candidates.resolution)}"]
    if candidates.fallback:
        lines.append("# fallback unscored")
    for d, score in candidates:
        lines.append(f"{_g9(d.phi)} {_g9(d.psi)} {_g9(score)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_angle_list(path):
    from .search import AngleCandidateList

    pair_index = None
    resolution = None
    fallback = False
    entries = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                tok = text[1:].split()
                if len(tok) == 4 and tok[0] == "pair" and tok[2] == "resolution":
                    pair_index = _number(tok[1], int, path, no, "pair index")
                    resolution = _number(tok[3], float, path, no, "resolution")
                elif tok[:1] == ["fallback"]:
                    fallback = True
                continue
            tok = text.split()
            if len(tok) != 3:
                raise ParseError("expected 'phi psi score'", path=str(path),
                                 line_number=no)
            phi, psi, score = (_number(t, float, path, no, "number") for t in tok)
            entries.append((DihedralPair(phi, psi), score))
    if pair_index is None:
        raise ParseError("missing '# pair <i> resolution <R>' header", path=str(path))
    return AngleCandidateList(pair_index, tuple(entries), resolution, fallback)


# beams ------------------------------------------------------------------------

def write_beam(path, beam: Beam) -> None:
    """One line per entry: ``score phi1 psi1 phi2 psi2 ...``."""
    lines = []
    for score, row in zip(beam.scores, beam.angles):
        fields = [_g9(score)] + [_g9(a) for a in row.ravel()]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_beam(path) -> Beam:
    rows = []
    width = None
    for no, tok in _data_lines(path):
        if len(tok) < 3 or len(tok) % 2 == 0:
            raise ParseError("expected score followed by phi/psi pairs",
                             path=str(path), line_number=no)
        if width is not None and len(tok) != width:
            raise ParseError("inconsistent entry length", path=str(path),
                             line_number=no)
        width = len(tok)
        rows.append([_number(t, float, path, no, "number") for t in tok])
    if not rows:
        raise ParseError("empty beam file", path=str(path))
    arr = np.array(rows)
    return Beam(arr[:, 1:].reshape(len(rows), -1, 2), arr[:, 0])


# coordinates ----------------------------------------------------------------

def write_coordinates(path, chain: BackboneChain) -> None:
    """``res_index atom_name x y z`` per atom; undefined atoms are skipped."""
    lines = [COORD_HEADER.format(n=chain.n_residues)]
    for i, res in enumerate(chain.residue_numbers):
        for a, name in enumerate(ATOM_NAMES):
            x, y, z = chain.coords[i, a]
            if math.isnan(x):
                continue
            lines.append(f"{res} {name} {x:.6f} {y:.6f} {z:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_coordinates(path) -> dict[int, dict[str, np.ndarray]]:
    out: dict[int, dict[str, np.ndarray]] = {}
    for no, tok in _data_lines(path):
        if len(tok) != 5 or tok[1] not in ATOM_NAMES:
            raise ParseError("expected 'res_index atom x y z'", path=str(path),
                             line_number=no)
        res = _number(tok[0], int, path, no, "residue index")
        out.setdefault(res, {})[tok[1]] = np.array(
            [_number(t, float, path, no, "coordinate") for t in tok[2:]])
    return out


# filter inputs --------------------------------------------------------------

def parse_rama_table(path) -> RamachandranTable:
    regions: dict[str, list[Rectangle]] = {}
    for no, tok in _data_lines(path):
        if len(tok) != 5:
            raise ParseError("expected 'class phi_min phi_max psi_min psi_max'",
                             path=str(path), line_number=no)
        bounds = [_number(t, float, path, no, "bound") for t in tok[1:]]
        try:
            regions.setdefault(tok[0], []).append(Rectangle(*bounds))
        except ValidationError as exc:
            raise ParseError(str(exc), path=str(path), line_number=no) from None
    if not regions:
        raise ParseError("no regions", path=str(path))
    return RamachandranTable(regions)


def write_rama_table(path, table: RamachandranTable) -> None:
    lines = ["# class phi_min phi_max psi_min psi_max"]
    for cls in table.classes():
        for r in table.rectangles(cls):
            lines.append(f"{cls} {_g9(r.phi_min)} {_g9(r.phi_max)} "
                         f"{_g9(r.psi_min)} {_g9(r.psi_max)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_coupling_file(path) -> dict[int, ScalarCouplingRecord]:
    out = {}
    for no, tok in _data_lines(path):
        if len(tok) not in (2, 3):
            raise ParseError("expected 'res_index J [tolerance]'", path=str(path),
                             line_number=no)
        res = _number(tok[0], int, path, no, "residue index")
        j = _number(tok[1], float, path, no, "J")
        tol = _number(tok[2], float, path, no, "tolerance") if len(tok) == 3 else 1.0
        try:
            out[res] = ScalarCouplingRecord(res, j, tol)
        except ValidationError as exc:
            raise ParseError(str(exc), path=str(path), line_number=no) from None
    return out


def write_coupling_file(path, couplings: Iterable[ScalarCouplingRecord]) -> None:
    lines = ["# res_index J tolerance"]
    lines += [f"{c.residue_index} {c.j!r} {c.tolerance!r}" for c in couplings]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# key=value config -------------------------------------------------------------

def parse_config(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ParseError("expected key=value", path=str(path),
                                 line_number=no)
            key, value = (s.strip() for s in text.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


# synthetic truth --------------------------------------------------------------

def write_truth(path, dihedrals: Sequence[DihedralPair], tensors: Mapping[int, np.ndarray],
                noise: float, seed: int) -> None:
    lines = [f"# truth seed {seed} noise {noise!r}"]
    for k, d in enumerate(dihedrals, start=1):
        lines.append(f"pair {k} {d.phi!r} {d.psi!r}")
    for medium, s in sorted(tensors.items()):
        lines.append(f"tensor {medium} " + " ".join(repr(float(x)) for x in s))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_truth(path) -> tuple[list[DihedralPair], dict[int, np.ndarray]]:
    pairs: dict[int, DihedralPair] = {}
    tensors = {}
    for no, tok in _data_lines(path):
        if tok[0] == "pair" and len(tok) == 4:
            pairs[int(tok[1])] = DihedralPair(float(tok[2]), float(tok[3]))
        elif tok[0] == "tensor" and len(tok) == 7:
            tensors[int(tok[1])] = np.array([float(t) for t in tok[2:]])
        else:
            raise ParseError("unrecognized truth line", path=str(path),
                             line_number=no)
    return [pairs[k] for k in sorted(pairs)], tensors
