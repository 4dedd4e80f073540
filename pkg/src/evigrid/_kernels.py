"""Numba kernel for grid-line ray marching.

All geometry works in cell units: positions are grid coordinates where cell
(row, col) spans [col, col+1) x [row, row+1), and distances are measured in
cells. Callers convert from metric coordinates once, so the tests' reference
implementations can evaluate the same numbers on the same floats.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def march_rays(free_out, det_mask, px, py, cos_t, sin_t, t_stop):
    """March rays, marking every traversed cell until each ray's stop.

    Ray ``r`` starts at (px[r], py[r]) with direction (cos_t[r], sin_t[r])
    and covers all cells the segment of length t_stop[r] passes through
    (grid-line traversal; exact corner crossings step diagonally, so the
    zero-measure corner neighbours are skipped). A nonzero ``det_mask`` cell
    stops the ray early and is not marked. Cells are marked in ``free_out``.
    """
    height, width = free_out.shape
    for r in range(px.shape[0]):
        dx = cos_t[r]
        dy = sin_t[r]
        u0 = px[r]
        v0 = py[r]
        col = int(np.floor(u0))
        row = int(np.floor(v0))
        if dx > 0.0:
            step_c = 1
            t_max_x = (col + 1.0 - u0) / dx
            t_delta_x = 1.0 / dx
        elif dx < 0.0:
            step_c = -1
            t_max_x = (u0 - col) / -dx
            t_delta_x = 1.0 / -dx
        else:
            step_c = 0
            t_max_x = np.inf
            t_delta_x = np.inf
        if dy > 0.0:
            step_r = 1
            t_max_y = (row + 1.0 - v0) / dy
            t_delta_y = 1.0 / dy
        elif dy < 0.0:
            step_r = -1
            t_max_y = (v0 - row) / -dy
            t_delta_y = 1.0 / -dy
        else:
            step_r = 0
            t_max_y = np.inf
            t_delta_y = np.inf

        limit = t_stop[r]
        was_inside = False
        while True:
            inside = 0 <= row < height and 0 <= col < width
            if inside:
                if det_mask[row, col]:
                    break
                free_out[row, col] = 1
                was_inside = True
            elif was_inside:
                break  # left the grid; a straight ray cannot re-enter
            t_next = min(t_max_x, t_max_y)
            if t_next >= limit:
                break
            if t_max_x < t_max_y:
                col += step_c
                t_max_x += t_delta_x
            elif t_max_y < t_max_x:
                row += step_r
                t_max_y += t_delta_y
            else:
                col += step_c
                row += step_r
                t_max_x += t_delta_x
                t_max_y += t_delta_y
