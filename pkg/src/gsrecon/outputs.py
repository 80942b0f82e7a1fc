"""Plain-text result files.

All numbers are written with 17 significant digits through Python's own
float formatting, which does not depend on the locale.

psi.txt
    ``# node r z psi psibar``, one row per mesh node, flux in the caller's
    sign convention.
profiles.txt
    one header line naming the columns psibar A B ne pprime ffprime p f q,
    then 101 rows on a uniform grid; q is ``nan`` where undefined.
contours.txt
    for each level 0.1, 0.2, ..., 1.0 a line ``level L points K`` followed by
    K lines ``r z`` (first point repeated last); K = 0 if no closed line.
report.txt
    convergence history and misfits (see :class:`gsrecon.twin.RunReport`).
timing.txt
    per-iteration wall time, kept apart so report.txt stays reproducible.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError, GSReconError
from .geometry import flux_contour
from .profiles import PROFILE_COLUMNS

__all__ = ["CONTOUR_LEVELS", "fmt", "format_psi", "format_profiles", "format_contours", "write_outputs"]

CONTOUR_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 11))


def fmt(x) -> str:
    return format(float(x), ".17g")


def _rows(table) -> str:
    return "".join(" ".join(fmt(v) for v in row) + "\n" for row in table)


def format_psi(mesh, state) -> str:
    psi = state.psi
    psibar = state.domain.psibar(psi)
    phys = state.physical_psi()
    lines = ["# node r z psi psibar\n"]
    for i, ((r, z), p, pb) in enumerate(zip(mesh.nodes, phys, psibar)):
        lines.append(f"{i} {fmt(r)} {fmt(z)} {fmt(p)} {fmt(pb)}\n")
    return "".join(lines)


def format_profiles(derived) -> str:
    return "# " + " ".join(PROFILE_COLUMNS) + "\n" + _rows(derived.table())


def format_contours(mesh, state, levels=CONTOUR_LEVELS) -> str:
    out = []
    for lev in levels:
        try:
            pts = flux_contour(mesh, state.psi, lev, state.domain).points
        except GSReconError:
            pts = np.zeros((0, 2))
        out.append(f"level {fmt(lev)} points {len(pts)}\n")
        out.append(_rows(pts))
    return "".join(out)


def write_outputs(mesh, state, history, derived, directory, report=None) -> list:
    """Write the result files into `directory` (created if needed); returns their paths."""
    directory = os.fspath(directory)
    texts = {
        "psi.txt": format_psi(mesh, state),
        "profiles.txt": format_profiles(derived),
        "contours.txt": format_contours(mesh, state),
    }
    if report is not None:
        texts["report.txt"] = report.to_text()
        texts["timing.txt"] = report.timing_text()
    try:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for name, text in texts.items():
            path = os.path.join(directory, name)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            paths.append(path)
    except OSError as exc:
        raise DataError(f"cannot write outputs to {directory}: {exc.strerror}") from None
    return paths
