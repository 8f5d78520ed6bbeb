"""Color-filter-array layouts for hybrid mosaics with embedded event pixels.

A layout is a repeating block of per-cell roles. APS cells carry a color
filter (or are plain white); EVS cells sit inside the mosaic at fixed block
coordinates and form their own lower-resolution grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import LayoutError

# Cell roles. Values below EVS_W are APS cells.
ROLE_R = 0
ROLE_G = 1
ROLE_B = 2
ROLE_W = 3
ROLE_EVS_W = 4
ROLE_EVS_R = 5
ROLE_EVS_G = 6
ROLE_EVS_B = 7

ROLE_NAMES = {
    ROLE_R: "R", ROLE_G: "G", ROLE_B: "B", ROLE_W: "W",
    ROLE_EVS_W: "EVS_W", ROLE_EVS_R: "EVS_R", ROLE_EVS_G: "EVS_G",
    ROLE_EVS_B: "EVS_B",
}
ROLE_CODES = {name: code for code, name in ROLE_NAMES.items()}

# Channel a role samples in the inverse pipeline: 0/1/2 = R/G/B, 3 = luminance.
ROLE_CHANNEL = {
    ROLE_R: 0, ROLE_G: 1, ROLE_B: 2, ROLE_W: 3,
    ROLE_EVS_W: 3, ROLE_EVS_R: 0, ROLE_EVS_G: 1, ROLE_EVS_B: 2,
}

# Native sensor dimensions reported for the supported hybrid chips,
# (aps_height, aps_width) and (evs_height, evs_width). Informational only;
# any frame whose dimensions tile the block is accepted.
PRESET_NATIVE_DIMS = {
    "gen2": {"aps": (2448, 3246), "evs": (1224, 1632)},
    "eiger": {"aps": (2448, 3246), "evs": (612, 816)},
}


def is_evs_role(role: int) -> bool:
    return role >= ROLE_EVS_W


@dataclass(frozen=True)
class CfaLayout:
    """A repeating block of cell roles plus per-cell demosaic channels.

    roles:  int8 array (block_height, block_width) of ROLE_* codes.
    infill: int8 array, same shape; the RGB channel (0/1/2) each cell is
            interpolated as when its own sample is missing or non-color
            (EVS and white cells). Defaults to the role's own channel,
            with white-family cells falling back to green.
    """

    roles: np.ndarray
    infill: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        roles = np.asarray(self.roles, dtype=np.int8)
        if roles.ndim != 2 or roles.size == 0:
            raise LayoutError("roles must be a non-empty 2-D array")
        if not np.all((roles >= ROLE_R) & (roles <= ROLE_EVS_B)):
            raise LayoutError("roles contains an unknown role code")
        object.__setattr__(self, "roles", roles)
        if self.infill is None:
            infill = np.empty(roles.shape, dtype=np.int8)
            for code, chan in ROLE_CHANNEL.items():
                infill[roles == code] = chan if chan < 3 else ROLE_G
        else:
            infill = np.asarray(self.infill, dtype=np.int8)
            if infill.shape != roles.shape:
                raise LayoutError("infill shape must match roles")
            if not np.all((infill >= 0) & (infill <= 2)):
                raise LayoutError("infill entries must be RGB channels 0..2")
        object.__setattr__(self, "infill", infill)

        aps = [(r, c) for r in range(roles.shape[0]) for c in range(roles.shape[1])
               if not is_evs_role(int(roles[r, c]))]
        evs = [(r, c) for r in range(roles.shape[0]) for c in range(roles.shape[1])
               if is_evs_role(int(roles[r, c]))]
        object.__setattr__(self, "aps_positions", tuple(aps))
        object.__setattr__(self, "evs_cells", tuple(evs))
        if not aps:
            raise LayoutError("layout needs at least one APS cell")
        if evs:
            rows = sorted({r for r, _ in evs})
            cols = sorted({c for _, c in evs})
            if len(evs) != len(rows) * len(cols) or \
                    {(r, c) for r in rows for c in cols} != set(evs):
                raise LayoutError("EVS cells must form a full row x column grid "
                                  "within the block")
            object.__setattr__(self, "_evs_rows", tuple(rows))
            object.__setattr__(self, "_evs_cols", tuple(cols))
        else:
            object.__setattr__(self, "_evs_rows", ())
            object.__setattr__(self, "_evs_cols", ())

    # -- geometry ----------------------------------------------------------

    @property
    def block_height(self) -> int:
        return self.roles.shape[0]

    @property
    def block_width(self) -> int:
        return self.roles.shape[1]

    @property
    def n_positions(self) -> int:
        return len(self.aps_positions)

    def validate_dims(self, height: int, width: int) -> None:
        if height % self.block_height or width % self.block_width:
            raise LayoutError(
                f"sensor {height}x{width} does not tile the "
                f"{self.block_height}x{self.block_width} block"
            )

    def role_map(self, height: int, width: int) -> np.ndarray:
        self.validate_dims(height, width)
        reps = (height // self.block_height, width // self.block_width)
        return np.tile(self.roles, reps)

    def channel_map(self, height: int, width: int) -> np.ndarray:
        """Per-pixel sampling channel: 0/1/2 = R/G/B, 3 = luminance."""
        chan = np.empty(self.roles.shape, dtype=np.int8)
        for code, c in ROLE_CHANNEL.items():
            chan[self.roles == code] = c
        self.validate_dims(height, width)
        return np.tile(chan, (height // self.block_height,
                              width // self.block_width))

    def infill_map(self, height: int, width: int) -> np.ndarray:
        self.validate_dims(height, width)
        return np.tile(self.infill, (height // self.block_height,
                                     width // self.block_width))

    def aps_mask(self, height: int, width: int) -> np.ndarray:
        return self.role_map(height, width) < ROLE_EVS_W

    def position_map(self, height: int, width: int) -> np.ndarray:
        """Index into aps_positions for every pixel.

        EVS cells get the index of their nearest APS cell (Euclidean,
        raster-order tie break) so noise synthesis has coefficients
        everywhere; calibration masks them out via aps_mask.
        """
        block = np.empty(self.roles.shape, dtype=np.int16)
        index = {pos: i for i, pos in enumerate(self.aps_positions)}
        for r in range(self.block_height):
            for c in range(self.block_width):
                if (r, c) in index:
                    block[r, c] = index[(r, c)]
                else:
                    best = min(
                        self.aps_positions,
                        key=lambda p: ((p[0] - r) ** 2 + (p[1] - c) ** 2,
                                       p[0], p[1]),
                    )
                    block[r, c] = index[best]
        self.validate_dims(height, width)
        return np.tile(block, (height // self.block_height,
                               width // self.block_width))

    # -- EVS grid ----------------------------------------------------------

    @property
    def has_evs(self) -> bool:
        return bool(self.evs_cells)

    def evs_shape(self, height: int, width: int) -> tuple[int, int]:
        self.validate_dims(height, width)
        if not self.has_evs:
            return (0, 0)
        return (height // self.block_height * len(self._evs_rows),
                width // self.block_width * len(self._evs_cols))

    def evs_site_indices(self, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        """Sensor (row, col) arrays of EVS sites in EVS-grid raster order.

        plane[rows, cols].reshape(evs_shape) extracts the EVS-grid image.
        """
        eh, ew = self.evs_shape(height, width)
        if eh == 0:
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        gr = np.asarray(self._evs_rows)
        gc = np.asarray(self._evs_cols)
        by = np.arange(height // self.block_height) * self.block_height
        bx = np.arange(width // self.block_width) * self.block_width
        rows = (by[:, None] + gr[None, :]).ravel()
        cols = (bx[:, None] + gc[None, :]).ravel()
        rr = np.repeat(rows, ew)
        cc = np.tile(cols, eh)
        return rr, cc

    def quad_group_channels(self) -> np.ndarray | None:
        """Channel pattern of 2x2 single-channel groups, or None.

        Quad-style blocks (each aligned 2x2 group shares one infill channel)
        can be binned to a conventional Bayer grid before demosaicing.
        """
        bh, bw = self.roles.shape
        if bh % 2 or bw % 2 or (bh, bw) == (2, 2):
            return None
        groups = np.empty((bh // 2, bw // 2), dtype=np.int8)
        for gr in range(bh // 2):
            for gc in range(bw // 2):
                cells = self.infill[2 * gr:2 * gr + 2, 2 * gc:2 * gc + 2]
                if not np.all(cells == cells[0, 0]):
                    return None
                groups[gr, gc] = cells[0, 0]
        return groups


def _quad_bayer_roles() -> np.ndarray:
    return np.array(
        [
            [ROLE_R, ROLE_R, ROLE_G, ROLE_G],
            [ROLE_R, ROLE_R, ROLE_G, ROLE_G],
            [ROLE_G, ROLE_G, ROLE_B, ROLE_B],
            [ROLE_G, ROLE_G, ROLE_B, ROLE_B],
        ],
        dtype=np.int8,
    )


def _quad_bayer_infill() -> np.ndarray:
    base = _quad_bayer_roles().copy()
    return base  # roles R/G/B coincide with channel codes 0/1/2


@lru_cache(maxsize=None)
def cfa_preset(name: str) -> CfaLayout:
    """Built-in layouts.

    quad_bayer: plain 4x4 Quad-Bayer, 16 APS positions, no event cells.
    gen2:       Quad-Bayer with one white event cell per block at (1, 1).
    eiger:      Quad-Bayer with four color-filtered event cells per block
                at (1,1)/(1,3)/(3,1)/(3,3).

    EVS cell coordinates inside the block are documented defaults, not
    vendor data; build a custom CfaLayout to move them.
    """
    if name == "quad_bayer":
        return CfaLayout(_quad_bayer_roles(), _quad_bayer_infill(), name=name)
    if name == "gen2":
        roles = _quad_bayer_roles()
        roles[1, 1] = ROLE_EVS_W
        return CfaLayout(roles, _quad_bayer_infill(), name=name)
    if name == "eiger":
        roles = _quad_bayer_roles()
        roles[1, 1] = ROLE_EVS_R
        roles[1, 3] = ROLE_EVS_G
        roles[3, 1] = ROLE_EVS_G
        roles[3, 3] = ROLE_EVS_B
        return CfaLayout(roles, _quad_bayer_infill(), name=name)
    raise LayoutError(f"unknown CFA preset {name!r}")
