import logging
import os
import shutil

from ..planner import JoinError
from ..types import JoinManifest

logger = logging.getLogger(__name__)


def _free_name(dest_dir: str, name: str, index: int) -> str:
    if not os.path.lexists(os.path.join(dest_dir, name)):
        return name
    return f"{name}.__i{index}"


def _copy_into(src: str, dest_dir: str, name: str, index: int) -> str:
    target = os.path.join(dest_dir, _free_name(dest_dir, name, index))
    if os.path.isdir(src):
        shutil.copytree(src, target)
    else:
        shutil.copyfile(src, target)
    return target


def _check_parts(manifest: JoinManifest, want_dir: bool):
    for part in manifest.parts:
        if not os.path.exists(part.path):
            raise JoinError(f"{manifest.port}: part {part.instance_index} is missing ({part.path})")
        if os.path.isdir(part.path) != want_dir:
            kind = "directory" if want_dir else "file"
            raise JoinError(f"{manifest.port}: {manifest.formato} expects {kind} parts, instance {part.instance_index} is not")


def apply_join(manifest: JoinManifest) -> str:
    """Materialize a join at `manifest.destino`; parts are taken in instance order."""
    parts = sorted(manifest.parts, key=lambda p: p.instance_index)
    destino = manifest.destino
    parent = os.path.dirname(destino)
    if parent:
        os.makedirs(parent, exist_ok=True)
    if os.path.isdir(destino):
        shutil.rmtree(destino)
    elif os.path.lexists(destino):
        os.remove(destino)

    if manifest.formato == "concat":
        _check_parts(manifest, want_dir=False)
        with open(destino, "wb") as out:
            for part in parts:
                with open(part.path, "rb") as f:
                    shutil.copyfileobj(f, out)
    elif manifest.formato == "include":
        _check_parts(manifest, want_dir=False)
        os.makedirs(destino)
        for part in parts:
            _copy_into(part.path, destino, os.path.basename(part.path), part.instance_index)
    else:
        _check_parts(manifest, want_dir=True)
        os.makedirs(destino)
        for part in parts:
            for name in sorted(os.listdir(part.path), key=os.fsencode):
                _copy_into(os.path.join(part.path, name), destino, name, part.instance_index)
    logger.info("joined %d parts of %s (%s)", len(parts), manifest.port, manifest.formato)
    return destino

