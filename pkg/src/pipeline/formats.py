"""
Formats de fichiers : V3D (volumes), D3F (champs), NET1 (segmenteur), lecture NIfTI-1

Tous les formats internes sont little-endian, données en ordre "x le plus rapide".
  V3D  : "V3D1", code de type u8 (0=float32, 1=uint8, 2=int32), dims 3xu32, spacing 3xf32, données
  D3F  : "D3F1", dims 3xu32, spacing 3xf32, puis blocs dx, dy, dz en float32
  NET1 : "NET1", K u32, H u32, puis W1 (30xH), b1 (H), W2 (HxK), b2 (K) en float32, ordre C
"""

import gzip
import logging
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import BadMagicError, FormatError, TruncatedPayloadError, UnsupportedDatatypeError
from ..segmentation.voxel_net import FEATURE_DIM, VoxelNet
from ..volume_core.volumes import DisplacementField, LabelVolume, Volume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

V3D_HEADER = np.dtype([("magic", "S4"), ("dtype", "u1"), ("dims", "<u4", (3,)), ("spacing", "<f4", (3,))])
D3F_HEADER = np.dtype([("magic", "S4"), ("dims", "<u4", (3,)), ("spacing", "<f4", (3,))])
NET1_HEADER = np.dtype([("magic", "S4"), ("classes", "<u4"), ("hidden", "<u4")])

V3D_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<i4")}

# Sous-ensemble NIfTI-1 : 2=uint8, 4=int16, 16=float32
NIFTI_DTYPES = {2: "u1", 4: "i2", 16: "f4"}
NIFTI_HEADER_SIZE = 348


def _read_header(raw: bytes, header: np.dtype, magic: bytes, path) -> np.void:
    if len(raw) < header.itemsize:
        if raw[:4] != magic[:len(raw[:4])]:
            raise BadMagicError(f"{path}: signature {raw[:4]!r}, attendu {magic!r}")
        raise TruncatedPayloadError(f"{path}: en-tête incomplet ({len(raw)} octets)")
    hdr = np.frombuffer(raw[:header.itemsize], dtype=header)[0]
    if bytes(hdr["magic"]) != magic:
        raise BadMagicError(f"{path}: signature {bytes(hdr['magic'])!r}, attendu {magic!r}")
    return hdr


def _payload(raw: bytes, offset: int, dtype: np.dtype, count: int, path) -> np.ndarray:
    needed = offset + count * dtype.itemsize
    if len(raw) < needed:
        raise TruncatedPayloadError(f"{path}: {len(raw)} octets, {needed} attendus")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset)


# ---------------------------------------------------------------------------
# V3D
# ---------------------------------------------------------------------------

def write_v3d(path: PathLike, vol: Union[Volume, LabelVolume]):
    """float32 pour un Volume, uint8 (K <= 256) ou int32 pour un LabelVolume"""
    if isinstance(vol, LabelVolume):
        code = 1 if vol.num_classes <= 256 else 2
    else:
        code = 0
    hdr = np.zeros((), dtype=V3D_HEADER)
    hdr["magic"] = b"V3D1"
    hdr["dtype"] = code
    hdr["dims"] = vol.dims
    hdr["spacing"] = vol.spacing
    data = vol.data.ravel(order="F").astype(V3D_DTYPES[code])
    Path(path).write_bytes(hdr.tobytes() + data.tobytes())


def read_v3d(path: PathLike, num_classes: int = 0) -> Union[Volume, LabelVolume]:
    """
    Lit un V3D : Volume pour float32, LabelVolume pour les types entiers

    Args:
        num_classes: K imposé pour les étiquettes (0 = max + 1, au moins 2)
    """
    raw = Path(path).read_bytes()
    hdr = _read_header(raw, V3D_HEADER, b"V3D1", path)
    code = int(hdr["dtype"])
    if code not in V3D_DTYPES:
        raise UnsupportedDatatypeError(f"{path}: code de type V3D inconnu {code}")
    dims = tuple(int(n) for n in hdr["dims"])
    spacing = tuple(float(s) for s in hdr["spacing"])
    flat = _payload(raw, V3D_HEADER.itemsize, V3D_DTYPES[code], int(np.prod(dims)), path)
    data = flat.reshape(dims, order="F")
    if code == 0:
        return Volume(data.astype(np.float64), spacing)
    k = num_classes or max(2, int(data.max()) + 1 if data.size else 2)
    return LabelVolume(data.astype(np.int32), k, spacing)


# ---------------------------------------------------------------------------
# D3F
# ---------------------------------------------------------------------------

def write_d3f(path: PathLike, field: DisplacementField):
    hdr = np.zeros((), dtype=D3F_HEADER)
    hdr["magic"] = b"D3F1"
    hdr["dims"] = field.dims
    hdr["spacing"] = field.spacing
    blocks = [field.data[c].ravel(order="F").astype("<f4").tobytes() for c in range(3)]
    Path(path).write_bytes(hdr.tobytes() + b"".join(blocks))


def read_d3f(path: PathLike) -> DisplacementField:
    raw = Path(path).read_bytes()
    hdr = _read_header(raw, D3F_HEADER, b"D3F1", path)
    dims = tuple(int(n) for n in hdr["dims"])
    spacing = tuple(float(s) for s in hdr["spacing"])
    count = int(np.prod(dims))
    flat = _payload(raw, D3F_HEADER.itemsize, np.dtype("<f4"), 3 * count, path)
    data = np.stack([flat[c * count:(c + 1) * count].reshape(dims, order="F") for c in range(3)])
    return DisplacementField(data.astype(np.float64), spacing)


# ---------------------------------------------------------------------------
# NET1
# ---------------------------------------------------------------------------

def write_net(path: PathLike, net: VoxelNet):
    hdr = np.zeros((), dtype=NET1_HEADER)
    hdr["magic"] = b"NET1"
    hdr["classes"] = net.num_classes
    hdr["hidden"] = net.hidden
    arrays = [net.w1, net.b1, net.w2, net.b2]
    body = b"".join(np.ascontiguousarray(a).astype("<f4").tobytes() for a in arrays)
    Path(path).write_bytes(hdr.tobytes() + body)


def read_net(path: PathLike) -> VoxelNet:
    raw = Path(path).read_bytes()
    hdr = _read_header(raw, NET1_HEADER, b"NET1", path)
    k, h = int(hdr["classes"]), int(hdr["hidden"])
    shapes = [(FEATURE_DIM, h), (h,), (h, k), (k,)]
    offset = NET1_HEADER.itemsize
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(_payload(raw, offset, np.dtype("<f4"), count, path).reshape(shape).astype(np.float64))
        offset += 4 * count
    return VoxelNet(*arrays)


# ---------------------------------------------------------------------------
# NIfTI-1 (lecture seule)
# ---------------------------------------------------------------------------

def _nifti_header_dtype(endian: str) -> np.dtype:
    return np.dtype([
        ("sizeof_hdr", endian + "i4"),
        ("pad0", "V36"),
        ("dim", endian + "i2", (8,)),
        ("pad1", "V14"),
        ("datatype", endian + "i2"),
        ("bitpix", endian + "i2"),
        ("slice_start", endian + "i2"),
        ("pixdim", endian + "f4", (8,)),
        ("vox_offset", endian + "f4"),
        ("scl_slope", endian + "f4"),
        ("scl_inter", endian + "f4"),
        ("pad2", "V224"),
        ("magic", "S4"),
    ])


def read_nifti(path: PathLike, as_labels: bool = False, num_classes: int = 0) -> Union[Volume, LabelVolume]:
    """
    Lit un fichier .nii (ou .nii.gz) mono-volume

    sizeof_hdr = 348 obligatoire (il fixe aussi l'endianness), types 2/4/16,
    mise à l'échelle scl_slope/scl_inter appliquée si scl_slope != 0.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        raw = f.read()

    if len(raw) < NIFTI_HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: en-tête NIfTI incomplet ({len(raw)} octets)")
    endian = None
    for candidate in ("<", ">"):
        if int(np.frombuffer(raw[:4], dtype=candidate + "i4")[0]) == NIFTI_HEADER_SIZE:
            endian = candidate
            break
    if endian is None:
        raise BadMagicError(f"{path}: sizeof_hdr différent de 348")

    hdr = np.frombuffer(raw[:NIFTI_HEADER_SIZE], dtype=_nifti_header_dtype(endian))[0]
    if bytes(hdr["magic"]) not in (b"n+1\x00", b"ni1\x00"):
        logger.warning(f"⚠️ {path}: signature NIfTI inattendue {bytes(hdr['magic'])!r}")

    datatype = int(hdr["datatype"])
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedDatatypeError(f"{path}: datatype NIfTI {datatype} non pris en charge")

    dim = [int(d) for d in hdr["dim"]]
    ndim = dim[0]
    if not 3 <= ndim <= 7 or any(d > 1 for d in dim[4:ndim + 1]):
        raise FormatError(f"{path}: seuls les volumes 3D sont pris en charge (dim={dim})")
    dims = tuple(dim[1:4])
    if min(dims) < 1:
        raise FormatError(f"{path}: dimensions invalides {dims}")

    spacing = []
    for p in hdr["pixdim"][1:4]:
        p = float(abs(p))
        spacing.append(p if p > 0 else 1.0)

    offset = int(hdr["vox_offset"])
    if offset < NIFTI_HEADER_SIZE:
        raise FormatError(f"{path}: vox_offset {offset} < 348")
    dtype = np.dtype(endian + NIFTI_DTYPES[datatype])
    flat = _payload(raw, offset, dtype, int(np.prod(dims)), path)
    data = flat.reshape(dims, order="F").astype(np.float64)

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0.0 and np.isfinite(slope):
        data = data * slope + inter

    if as_labels:
        labels = np.rint(data).astype(np.int32)
        k = num_classes or max(2, int(labels.max()) + 1)
        return LabelVolume(labels, k, tuple(spacing))
    return Volume(data, tuple(spacing))


def read_volume(path: PathLike, as_labels: bool = False, num_classes: int = 0):
    """Lecture par extension (.v3d, .nii, .nii.gz)"""
    name = str(path).lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return read_nifti(path, as_labels=as_labels, num_classes=num_classes)
    vol = read_v3d(path, num_classes=num_classes)
    if as_labels and isinstance(vol, Volume):
        labels = np.rint(vol.data).astype(np.int32)
        return LabelVolume(labels, num_classes or max(2, int(labels.max()) + 1), vol.spacing)
    return vol
