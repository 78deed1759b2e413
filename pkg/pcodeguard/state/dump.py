import json
import logging
import os
from typing import List, Optional, Tuple

from pydantic import ValidationError

from pcodeguard.core.exceptions import (
    FileUnreadableError,
    MalformedSidecarError,
    SegmentOverlapError,
    UnknownRegisterNameError,
)
from pcodeguard.schemas import DumpManifest
from pcodeguard.state.machine import MachineState, RegisterMap

logger = logging.getLogger(__name__)


def read_manifest(path: str) -> DumpManifest:
    """Parses a dump manifest; segment paths are resolved relative to the manifest."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise FileUnreadableError(path, str(e)) from None
    except json.JSONDecodeError as e:
        raise MalformedSidecarError(path, e.msg, e.lineno) from None
    try:
        manifest = DumpManifest.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise MalformedSidecarError(path, f"{where}: {first['msg']}") from None

    base_dir = os.path.dirname(os.path.abspath(path))
    for segment in manifest.segments:
        if not os.path.isabs(segment.file):
            segment.file = os.path.join(base_dir, segment.file)
    return manifest


def _read_segment(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise FileUnreadableError(path, str(e)) from None


def load_dump(state: MachineState, manifest: DumpManifest, register_map: Optional[RegisterMap] = None) -> None:
    """Applies registers and segment images to `state`; pc comes from `rip`."""
    names = {k.lower(): v for k, v in (register_map or state.registers.name_map).items()}

    for name in manifest.registers:
        if name.lower() not in names:
            raise UnknownRegisterNameError(name)

    images: List[Tuple[int, bytes]] = []
    for segment in manifest.segments:
        images.append((segment.base, _read_segment(segment.file)))
    images.sort(key=lambda item: item[0])
    for (base_a, data_a), (base_b, _) in zip(images, images[1:]):
        if base_a + len(data_a) > base_b:
            raise SegmentOverlapError(base_a, base_b)

    for name, value in manifest.registers.items():
        offset, size = names[name.lower()]
        state.registers.write_bytes(offset, (value & ((1 << (size * 8)) - 1)).to_bytes(size, "little"))
    for base, data in images:
        state.memory.write_bytes(base, data)
        logger.debug(f"Mapped dump segment 0x{base:x} ({len(data)} bytes)")

    rip = next((v for k, v in manifest.registers.items() if k.lower() == "rip"), None)
    if rip is not None:
        state.pc = rip
    logger.info(f"Loaded dump: {len(manifest.registers)} registers, {len(images)} segments, pc=0x{state.pc:x}")
