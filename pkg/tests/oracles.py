"""Brute-force reference computations the tests check the fast paths against.

Everything here favours obviousness over speed: rays are resolved by testing
every grid cell against the segment definition, radar cones by per-ray scalar
loops over all cap arcs with no prefiltering.
"""

import math

import numpy as np


def segment_cells(u0, v0, dx, dy, limit, height, width):
    """Cells, ordered by entry parameter, that a ray segment passes through.

    The segment starts at (u0, v0) in cell units with unit direction
    (dx, dy) and length ``limit``. A cell counts when the overlap between the
    segment and the cell square has positive length, so corner grazes and an
    entry exactly at the limit are excluded.
    """

    def axis_interval(p0, d, lo, hi):
        if d > 0.0:
            return (lo - p0) / d, (hi - p0) / d
        if d < 0.0:
            return (hi - p0) / d, (lo - p0) / d
        inside = (lo <= p0) & (p0 < hi)
        return (
            np.where(inside, -np.inf, np.inf),
            np.where(inside, np.inf, -np.inf),
        )

    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    tx_in, tx_out = axis_interval(u0, dx, cols.astype(float), cols + 1.0)
    ty_in, ty_out = axis_interval(v0, dy, rows.astype(float), rows + 1.0)
    t_in = np.maximum(tx_in, ty_in)
    t_out = np.minimum(tx_out, ty_out)
    eff_in = np.maximum(t_in, 0.0)
    eff_out = np.minimum(t_out, limit)
    keep = eff_out > eff_in
    order = np.argsort(t_in[keep], kind="stable")
    kept_rows = rows[keep][order]
    kept_cols = cols[keep][order]
    return list(zip(kept_rows.tolist(), kept_cols.tolist()))


def ilm_reference(scan, params, geometry):
    """Reference inverse lidar model; returns (free_mask, det_mask)."""
    if scan.z is not None and scan.points.shape[0]:
        keep = (scan.z >= params.z_min) & (scan.z <= params.z_max)
        points = scan.points[keep]
    else:
        points = scan.points

    det = np.zeros((geometry.height, geometry.width), dtype=bool)
    if points.shape[0]:
        for x, y in scan.sensor_pose.apply(points):
            row = math.floor((y - geometry.origin_y) / geometry.resolution)
            col = math.floor((x - geometry.origin_x) / geometry.resolution)
            if 0 <= row < geometry.height and 0 <= col < geometry.width:
                det[row, col] = True

    u0 = (scan.sensor_pose.x - geometry.origin_x) / geometry.resolution
    v0 = (scan.sensor_pose.y - geometry.origin_y) / geometry.resolution
    n = int(round(360.0 / params.angular_resolution_deg))
    bearings = np.arange(n) * (2.0 * math.pi / n)
    limit = params.max_range / geometry.resolution

    free = np.zeros_like(det)
    for theta in bearings:
        for row, col in segment_cells(
            u0, v0, np.cos(theta), np.sin(theta), limit, geometry.height, geometry.width
        ):
            if det[row, col]:
                break
            free[row, col] = True
    return free, det


def _arc_crossing(px, py, dx, dy, arc):
    """Smallest positive parameter where the ray crosses the cap arc, or inf."""
    qx, qy, rad, erx, ery, elx, ely = arc
    wx, wy = qx - px, qy - py
    b = dx * wx + dy * wy
    cc = wx * wx + wy * wy - rad * rad
    disc = b * b - cc
    if disc < 0.0:
        return math.inf
    sq = math.sqrt(disc)
    best = math.inf
    for t in (b - sq, b + sq):
        if t <= 1e-12 or t >= best:
            continue
        hx = px + t * dx - qx
        hy = py + t * dy - qy
        if erx * hy - ery * hx >= 0.0 and hx * ely - hy * elx >= 0.0:
            best = t
    return best


def irm_reference(scans, params, geometry):
    """Reference inverse radar model; returns (free_mask, det_mask).

    Rebuilds every cone from the scans, stops each fan ray at the first
    cap-arc crossing over all cones (no prefilter), and enumerates traversed
    cells by the segment definition.
    """
    half = math.radians(params.cone_angle_deg) / 2.0
    max_range_cells = params.max_range / geometry.resolution

    wedges = []
    det = np.zeros((geometry.height, geometry.width), dtype=bool)
    for scan in scans[-params.history_depth :]:
        if scan.points.shape[0] == 0:
            continue
        px = (scan.sensor_pose.x - geometry.origin_x) / geometry.resolution
        py = (scan.sensor_pose.y - geometry.origin_y) / geometry.resolution
        for x, y in scan.sensor_pose.apply(scan.points):
            du = (x - geometry.origin_x) / geometry.resolution - px
            dv = (y - geometry.origin_y) / geometry.resolution - py
            rng = math.hypot(du, dv)
            if rng == 0.0 or rng > max_range_cells:
                continue
            wedges.append((px, py, rng, math.atan2(dv, du)))
            row, col = math.floor(py + dv), math.floor(px + du)
            if 0 <= row < geometry.height and 0 <= col < geometry.width:
                det[row, col] = True

    arcs = [
        (
            px,
            py,
            rng,
            math.cos(theta - half),
            math.sin(theta - half),
            math.cos(theta + half),
            math.sin(theta + half),
        )
        for px, py, rng, theta in wedges
    ]

    free = np.zeros_like(det)
    for px, py, rng, theta in wedges:
        arc_len = 2.0 * half * rng
        n = max(2, int(math.ceil(arc_len / 0.5)) + 1)
        for bearing in np.linspace(theta - half, theta + half, n):
            dx, dy = np.cos(bearing), np.sin(bearing)
            stop = rng
            for arc in arcs:
                stop = min(stop, _arc_crossing(px, py, dx, dy, arc))
            for row, col in segment_cells(
                px, py, dx, dy, stop, geometry.height, geometry.width
            ):
                free[row, col] = True
    return free, det
