"""Output writers: legacy-VTK snapshots, CSV tables, probe extraction."""

from __future__ import annotations

import numpy as np


def write_vtk(mesh, state, path, title="oedema fields"):
    """Legacy ASCII VTK unstructured-grid snapshot of one state.

    Point data: scalars p, phi_f, c_p, c_l and the displacement vector
    (vertex values only; bubble coefficients are dropped).
    """
    if mesh.dim != 2:
        raise ValueError("VTK output requires a 2D mesh")
    V = mesh.num_vertices
    C = mesh.num_cells
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {V} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x!r} {y!r} 0.0\n")
        f.write(f"CELLS {C} {4 * C}\n")
        for c in mesh.cells:
            f.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        f.write(f"CELL_TYPES {C}\n")
        f.write("5\n" * C)
        f.write(f"POINT_DATA {V}\n")
        for name, arr in (("p", state.p), ("phi_f", state.phi),
                          ("c_p", state.cp), ("c_l", state.cl)):
            f.write(f"SCALARS {name} double\n")
            f.write("LOOKUP_TABLE default\n")
            for v in arr[:V]:
                f.write(f"{v!r}\n")
        f.write("VECTORS u double\n")
        for i in range(V):
            f.write(f"{state.u[2 * i]!r} {state.u[2 * i + 1]!r} 0.0\n")


def read_vtk_point_data(path):
    """Minimal reader for files produced by :func:`write_vtk` (round-trip
    checks): returns points and the point-data arrays."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    i = lines.index(next(ln for ln in lines if ln.startswith("POINTS")))
    npts = int(lines[i].split()[1])
    pts = np.array([[float(v) for v in lines[i + 1 + k].split()]
                    for k in range(npts)])
    data = {}
    k = i + 1 + npts
    while k < len(lines):
        ln = lines[k]
        if ln.startswith("SCALARS"):
            name = ln.split()[1]
            vals = [float(lines[k + 2 + j]) for j in range(npts)]
            data[name] = np.array(vals)
            k += 2 + npts
        elif ln.startswith("VECTORS"):
            name = ln.split()[1]
            vals = [[float(v) for v in lines[k + 1 + j].split()]
                    for j in range(npts)]
            data[name] = np.array(vals)
            k += 1 + npts
        else:
            k += 1
    return pts, data


def write_csv(path, header, rows):
    """Comma-separated table with full-precision floats."""
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def probe_indices(mesh, points):
    """Nearest-vertex index for each probe location."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.linalg.norm(mesh.vertices[None, :, :pts.shape[1]]
                       - pts[:, None, :], axis=2)
    return np.argmin(d, axis=1)


def probe_series(mesh, traj, points, labels=None):
    """Time series of all five fields at the probe vertices.

    Returns (header, rows) ready for :func:`write_csv`.
    """
    idx = probe_indices(mesh, points)
    labels = labels or [chr(ord("A") + i) for i in range(len(idx))]
    d = mesh.dim
    header = ["t"]
    for lab in labels:
        if d == 2:
            header += [f"ux_{lab}", f"uy_{lab}"]
        else:
            header += [f"ux_{lab}"]
        header += [f"p_{lab}", f"phi_f_{lab}", f"cp_{lab}", f"cl_{lab}"]
    rows = []
    for t, s in zip(traj.times, traj.states):
        row = [t]
        for i in idx:
            if d == 2:
                row += [s.u[2 * i], s.u[2 * i + 1]]
            else:
                row += [s.u[i]]
            row += [s.p[i], s.phi[i], s.cp[i], s.cl[i]]
        rows.append(row)
    return header, rows
