"""Binary and text file formats: RAW frames, event streams, float planes,
images, and the calibration container.

All binary formats are little-endian with a magic and a version; readers
reject unknown magics and newer major versions. Large calibrated maps live
in sidecar binary planes next to the human-readable calibration file so
numeric round trips are bit exact.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .cfa import ROLE_CODES, ROLE_NAMES, CfaLayout
from .core import EVENT_DTYPE, ApsNoiseParams, EvsNoiseParams, RawFrame
from .errors import FormatError
from .isp import IspConfig

FORMAT_VERSION = 1

RAW_MAGIC = b"HRAW"
EVT_MAGIC = b"HEVT"
PLANE_MAGIC = b"HPLF"

# HRAW header (32 bytes): magic, u32 width, u32 height, u16 bit_depth,
# u64 exposure microseconds, u16 version, 8 reserved bytes
_RAW_HEADER = struct.Struct("<4sIIHQH8x")
# HEVT header (24 bytes): magic, u16 version, u16 reserved, u32 width,
# u32 height, 8 reserved bytes
_EVT_HEADER = struct.Struct("<4sHHII8x")
# HEVT record (14 bytes): u64 t, u16 x, u16 y, u8 polarity (1=ON, 0=OFF),
# u8 reserved
_EVT_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"),
                        ("polarity", "u1"), ("reserved", "u1")])
# HPLF header (24 bytes): magic, u16 version, u16 reserved, u32 width,
# u32 height, 8 reserved; float64 little-endian samples follow
_PLANE_HEADER = struct.Struct("<4sHHII8x")


def _check_magic_version(magic: bytes, expected: bytes, version: int,
                         path) -> None:
    if magic != expected:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {expected!r}")
    if version > FORMAT_VERSION:
        raise FormatError(
            f"{path}: format version {version} is newer than supported "
            f"version {FORMAT_VERSION}"
        )


# -- RAW frames ----------------------------------------------------------------


def write_raw(path, frame: RawFrame) -> None:
    path = Path(path)
    header = _RAW_HEADER.pack(RAW_MAGIC, frame.width, frame.height,
                              frame.bit_depth, frame.exposure_us,
                              FORMAT_VERSION)
    with open(path, "wb") as f:
        f.write(header)
        f.write(frame.data.astype("<u2").tobytes())


def read_raw(path, cfa: Optional[CfaLayout] = None) -> RawFrame:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, width, height, bit_depth, exposure_us, version = \
        _RAW_HEADER.unpack_from(blob)
    _check_magic_version(magic, RAW_MAGIC, version, path)
    expected = _RAW_HEADER.size + 2 * width * height
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<u2", offset=_RAW_HEADER.size)
    return RawFrame(data=data.reshape(height, width).copy(),
                    bit_depth=bit_depth, exposure_us=exposure_us, cfa=cfa)


# -- event streams ---------------------------------------------------------------


def write_events(path, events: np.ndarray, evs_shape: tuple[int, int]) -> None:
    path = Path(path)
    eh, ew = evs_shape
    header = _EVT_HEADER.pack(EVT_MAGIC, FORMAT_VERSION, 0, ew, eh)
    records = np.empty(events.size, dtype=_EVT_RECORD)
    records["t"] = events["t"]
    records["x"] = events["x"]
    records["y"] = events["y"]
    records["polarity"] = (events["p"] > 0).astype(np.uint8)
    records["reserved"] = 0
    with open(path, "wb") as f:
        f.write(header)
        f.write(records.tobytes())


def read_events(path) -> tuple[np.ndarray, tuple[int, int]]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _EVT_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, _, ew, eh = _EVT_HEADER.unpack_from(blob)
    _check_magic_version(magic, EVT_MAGIC, version, path)
    body = len(blob) - _EVT_HEADER.size
    if body % _EVT_RECORD.itemsize:
        raise FormatError(f"{path}: truncated event record")
    records = np.frombuffer(blob, dtype=_EVT_RECORD, offset=_EVT_HEADER.size)
    events = np.empty(records.size, dtype=EVENT_DTYPE)
    events["t"] = records["t"]
    events["x"] = records["x"]
    events["y"] = records["y"]
    events["p"] = np.where(records["polarity"] > 0, 1, -1).astype(np.int8)
    return events, (eh, ew)


def events_to_csv(path, events: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("t_us,x,y,polarity\n")
        for rec in events:
            f.write(f"{int(rec['t'])},{int(rec['x'])},{int(rec['y'])},"
                    f"{int(rec['p'])}\n")


def events_from_csv(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "t_us,x,y,polarity":
            raise FormatError(f"{path}: unexpected CSV header {header!r}")
        for line in f:
            t, x, y, p = line.strip().split(",")
            rows.append((int(t), int(x), int(y), int(p)))
    events = np.empty(len(rows), dtype=EVENT_DTYPE)
    for i, (t, x, y, p) in enumerate(rows):
        events[i] = (t, x, y, p)
    return events


# -- float planes -------------------------------------------------------------


def write_plane(path, plane: np.ndarray) -> None:
    arr = np.asarray(plane, dtype="<f8")
    if arr.ndim != 2:
        raise FormatError("planes must be 2-D")
    header = _PLANE_HEADER.pack(PLANE_MAGIC, FORMAT_VERSION, 0,
                                arr.shape[1], arr.shape[0])
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.tobytes())


def read_plane(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _PLANE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, _, width, height = _PLANE_HEADER.unpack_from(blob)
    _check_magic_version(magic, PLANE_MAGIC, version, path)
    expected = _PLANE_HEADER.size + 8 * width * height
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=_PLANE_HEADER.size)
    return data.reshape(height, width).copy()


# -- display images --------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Load an 8/16-bit PNG or PPM as float RGB in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return _read_ppm(path)
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=float) / 255.0


def write_image(path, srgb: np.ndarray, bit_depth: int = 8) -> None:
    """Write float RGB in [0, 1] as 8-bit PNG or 8/16-bit PPM."""
    path = Path(path)
    arr = np.clip(np.asarray(srgb, dtype=float), 0.0, 1.0)
    if path.suffix.lower() in (".ppm", ".pnm"):
        _write_ppm(path, arr, bit_depth)
        return
    if bit_depth != 8:
        raise FormatError("PNG export is 8-bit; use PPM for 16-bit output")
    data = np.rint(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def _write_ppm(path, arr: np.ndarray, bit_depth: int) -> None:
    if bit_depth not in (8, 16):
        raise FormatError("PPM bit depth must be 8 or 16")
    maxval = (1 << bit_depth) - 1
    data = np.rint(arr * maxval)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n{maxval}\n".encode())
        if bit_depth == 8:
            f.write(data.astype(np.uint8).tobytes())
        else:
            f.write(data.astype(">u2").tobytes())


def _read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval < 256:
        data = np.frombuffer(blob, dtype=np.uint8, offset=pos,
                             count=w * h * 3)
    else:
        data = np.frombuffer(blob, dtype=">u2", offset=pos, count=w * h * 3)
    return data.reshape(h, w, 3).astype(float) / maxval


# -- calibration container --------------------------------------------------------

CAL_MAGIC_LINE = "HYBRIDSIM-CAL"


@dataclass
class CalibrationData:
    """Everything the simulator consumes: layout, rendering parameters, and
    the two calibrated noise parameter sets (either may be absent)."""

    cfa: CfaLayout
    height: int
    width: int
    isp: IspConfig = field(default_factory=IspConfig)
    aps: Optional[ApsNoiseParams] = None
    evs: Optional[EvsNoiseParams] = None


def _fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.split()], dtype=float)


def save_calibration(path, cal: CalibrationData) -> None:
    """Write the text container plus sidecar planes (<stem>_planes/)."""
    path = Path(path)
    plane_dir = path.parent / f"{path.stem}_planes"
    plane_dir.mkdir(parents=True, exist_ok=True)
    rel = plane_dir.name

    lines = [f"{CAL_MAGIC_LINE} {FORMAT_VERSION}", "[sensor]",
             f"height = {cal.height}", f"width = {cal.width}", "[cfa]",
             f"name = {cal.cfa.name}",
             f"block = {cal.cfa.block_height} {cal.cfa.block_width}"]
    role_rows = [" ".join(ROLE_NAMES[int(r)] for r in row)
                 for row in cal.cfa.roles]
    lines.append("roles = " + " / ".join(role_rows))
    infill_rows = [" ".join(str(int(v)) for v in row) for row in cal.cfa.infill]
    lines.append("infill = " + " / ".join(infill_rows))

    isp = cal.isp
    lines += [
        "[isp]",
        f"gamma = {isp.gamma!r}",
        f"use_srgb_curve = {int(isp.use_srgb_curve)}",
        "ccm = " + " ; ".join(_fmt_floats(row) for row in isp.ccm),
        f"wb_gains = {_fmt_floats(isp.wb_gains)}",
        f"black_level = {isp.black_level!r}",
        f"white_level = {isp.white_level!r}",
        f"quad_binning = {int(isp.quad_binning)}",
    ]
    if isp.tone_curve is not None:
        lines.append("tone_curve = " +
                     " ; ".join(_fmt_floats(row) for row in isp.tone_curve))

    if cal.aps is not None:
        for name, plane in (("n_blc", cal.aps.n_blc),
                            ("n_dp", cal.aps.n_dp),
                            ("n_row", cal.aps.n_row[:, None])):
            write_plane(plane_dir / f"aps_{name}.hplf", plane)
        lines += ["[aps]", f"bit_depth = {cal.aps.bit_depth}"]
        for i, row in enumerate(cal.aps.beta_a):
            lines.append(f"beta{i} = {_fmt_floats(row)}")
        for name in ("n_blc", "n_dp", "n_row"):
            lines.append(f"{name} = {rel}/aps_{name}.hplf")

    if cal.evs is not None:
        write_plane(plane_dir / "evs_mu_n.hplf", cal.evs.mu_n)
        write_plane(plane_dir / "evs_mask.hplf",
                    cal.evs.bad_pixel_mask.astype(float))
        lines += [
            "[evs]",
            f"theta_hw_mv = {cal.evs.theta_hw_mv!r}",
            f"beta = {_fmt_floats(cal.evs.beta_e)}",
            f"mu_n = {rel}/evs_mu_n.hplf",
            f"mask = {rel}/evs_mask.hplf",
        ]

    path.write_text("\n".join(lines) + "\n")


def _parse_sections(text: str, path) -> dict[str, dict[str, str]]:
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty calibration file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != CAL_MAGIC_LINE:
        raise FormatError(f"{path}: not a calibration file")
    if int(head[1]) > FORMAT_VERSION:
        raise FormatError(
            f"{path}: calibration version {head[1]} is newer than supported "
            f"version {FORMAT_VERSION}"
        )
    sections: dict[str, dict[str, str]] = {}
    current = None
    for line in lines[1:]:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = {}
            continue
        if current is None or "=" not in line:
            raise FormatError(f"{path}: malformed line {line!r}")
        key, value = line.split("=", 1)
        sections[current][key.strip()] = value.strip()
    return sections


def _load_plane_checked(base: Path, rel: str, shape: tuple[int, int],
                        what: str) -> np.ndarray:
    plane_path = base / rel
    if not plane_path.exists():
        raise FileNotFoundError(f"missing {what} map file: {plane_path}")
    plane = read_plane(plane_path)
    if plane.shape != shape:
        raise FormatError(
            f"{plane_path}: {what} map is {plane.shape}, expected {shape}"
        )
    return plane


def load_calibration(path) -> CalibrationData:
    path = Path(path)
    sections = _parse_sections(path.read_text(), path)
    base = path.parent

    sensor = sections.get("sensor", {})
    height = int(sensor["height"])
    width = int(sensor["width"])

    cfa_sec = sections.get("cfa", {})
    name = cfa_sec.get("name", "custom")
    roles = np.array([[ROLE_CODES[tok] for tok in row.split()]
                      for row in cfa_sec["roles"].split("/")], dtype=np.int8)
    infill = np.array([[int(tok) for tok in row.split()]
                       for row in cfa_sec["infill"].split("/")], dtype=np.int8)
    cfa = CfaLayout(roles, infill, name=name)

    isp_sec = sections.get("isp", {})
    tone = None
    if "tone_curve" in isp_sec:
        tone = np.array([_parse_floats(row)
                         for row in isp_sec["tone_curve"].split(";")])
    isp = IspConfig(
        gamma=float(isp_sec.get("gamma", 2.2)),
        use_srgb_curve=bool(int(isp_sec.get("use_srgb_curve", "0"))),
        ccm=np.array([_parse_floats(row)
                      for row in isp_sec.get("ccm", "1 0 0;0 1 0;0 0 1").split(";")]),
        wb_gains=_parse_floats(isp_sec.get("wb_gains", "1 1 1")),
        black_level=float(isp_sec.get("black_level", 64.0)),
        white_level=float(isp_sec.get("white_level", 1023.0)),
        tone_curve=tone,
        quad_binning=bool(int(isp_sec.get("quad_binning", "1"))),
    )

    aps = None
    if "aps" in sections:
        sec = sections["aps"]
        beta = np.array([_parse_floats(sec[f"beta{i}"])
                         for i in range(cfa.n_positions)])
        n_blc = _load_plane_checked(base, sec["n_blc"], (height, width), "n_blc")
        n_dp = _load_plane_checked(base, sec["n_dp"], (height, width), "n_dp")
        n_row = _load_plane_checked(base, sec["n_row"], (height, 1), "n_row")
        aps = ApsNoiseParams(n_blc=n_blc, n_row=n_row[:, 0], n_dp=n_dp,
                             beta_a=beta, bit_depth=int(sec["bit_depth"]))

    evs = None
    if "evs" in sections:
        sec = sections["evs"]
        evs_shape = cfa.evs_shape(height, width)
        mu_n = _load_plane_checked(base, sec["mu_n"], evs_shape, "mu_n")
        mask = _load_plane_checked(base, sec["mask"], evs_shape, "mask")
        evs = EvsNoiseParams(theta_hw_mv=float(sec["theta_hw_mv"]),
                             beta_e=_parse_floats(sec["beta"]),
                             mu_n=mu_n, bad_pixel_mask=mask > 0.5)

    return CalibrationData(cfa=cfa, height=height, width=width, isp=isp,
                           aps=aps, evs=evs)


# -- run manifest ----------------------------------------------------------------


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key} = {value}\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out
