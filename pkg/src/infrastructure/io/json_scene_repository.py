import os
from typing import Any, Dict, Optional

import numpy as np
from loguru import logger
from PIL import Image

from ...application.scene_geometry import normalize_box_dims
from ...domain.entities.scene import BoxSource, CameraModel, DepthMap, ObjectInstance, OrientedBox3, Scene
from ...domain.errors import InvalidGeometry, SceneFormatError
from ...domain.repositories.scene_repository import SceneRepository
from ...domain.value_objects.mask import RleMask
from .jsonl import read_json, write_json
from .rle import mask_from_dict, mask_to_dict

DEPTH_SCALE = 1000.0


def load_depth_png(path: str, scale: float = DEPTH_SCALE) -> DepthMap:
    """16-bit PNG in millimeters (0 = no reading) to meters."""
    try:
        with Image.open(path) as image:
            raw = np.asarray(image, dtype=np.float64)
    except OSError as e:
        raise SceneFormatError(f"cannot read depth image {path}: {e}") from e
    if raw.ndim != 2:
        raise SceneFormatError(f"depth image {path} must be single-channel")
    return DepthMap(raw / scale)


def save_depth_png(depth: DepthMap, path: str, scale: float = DEPTH_SCALE) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    mm = np.clip(np.round(depth.values * scale), 0, np.iinfo(np.uint16).max).astype(np.uint16)
    Image.fromarray(mm).save(path)


def camera_to_dict(camera: CameraModel) -> Dict[str, Any]:
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "rotation": camera.rotation.tolist(), "translation": camera.translation.tolist(),
    }


def camera_from_dict(data: Dict[str, Any]) -> CameraModel:
    return CameraModel(
        fx=float(data["fx"]), fy=float(data["fy"]), cx=float(data["cx"]), cy=float(data["cy"]),
        width=int(data["width"]), height=int(data["height"]),
        rotation=np.asarray(data.get("rotation", np.eye(3)), dtype=float).reshape(3, 3),
        translation=np.asarray(data.get("translation", np.zeros(3)), dtype=float),
    )


def box_to_dict(box: OrientedBox3) -> Dict[str, Any]:
    return {"center": box.center.tolist(), "half_extents": box.half_extents.tolist(), "rotation": box.rotation.tolist()}


def box_from_dict(data: Dict[str, Any], source: BoxSource = BoxSource.UNIFIED) -> OrientedBox3:
    rotation = np.asarray(data.get("rotation", np.eye(3)), dtype=float).reshape(3, 3)
    if "half_extents" in data:
        half = np.asarray(data["half_extents"], dtype=float)
    else:
        # Local x spans the width, y the height and z the length.
        width, length, height = normalize_box_dims(data["dims"], source)
        half = 0.5 * np.array([width, height, length])
    return OrientedBox3(np.asarray(data["center"], dtype=float), half, rotation)


def object_to_dict(obj: ObjectInstance) -> Dict[str, Any]:
    out = {
        "id": obj.id, "category": obj.category, **box_to_dict(obj.box),
        "dense_caption": obj.dense_caption, "spatial_caption": obj.spatial_caption,
        "is_high_quality": obj.is_high_quality, "movable": obj.movable, "front_axis": obj.front_axis,
    }
    if obj.mask is not None:
        out["mask_rle"] = mask_to_dict(obj.mask)
    return out


def _read_mask(data: Dict[str, Any]) -> Optional[RleMask]:
    raw = data.get("mask_rle") or data.get("mask")
    return mask_from_dict(raw) if raw else None


def object_from_dict(data: Dict[str, Any], source: BoxSource = BoxSource.UNIFIED) -> ObjectInstance:
    return ObjectInstance(
        id=str(data["id"]),
        category=str(data["category"]),
        box=box_from_dict(data, source),
        dense_caption=data.get("dense_caption", ""),
        spatial_caption=data.get("spatial_caption", ""),
        mask=_read_mask(data),
        is_high_quality=bool(data.get("is_high_quality", True)),
        movable=bool(data.get("movable", True)),
        front_axis=str(data.get("front_axis", "+z")),
    )


def scene_from_dict(data: Dict[str, Any], depth: DepthMap) -> Scene:
    source = BoxSource(data.get("box_source", BoxSource.UNIFIED.value))
    return Scene(
        objects=tuple(object_from_dict(o, source) for o in data.get("objects", [])),
        camera=camera_from_dict(data["camera"]),
        depth=depth,
        gravity_rotation=np.asarray(data.get("gravity_rotation", np.eye(3)), dtype=float).reshape(3, 3),
        scene_id=str(data.get("scene_id", "scene")),
    )


def scene_to_dict(scene: Scene, depth_file: str = "depth.png") -> Dict[str, Any]:
    return {
        "scene_id": scene.scene_id,
        "camera": camera_to_dict(scene.camera),
        "gravity_rotation": scene.gravity_rotation.tolist(),
        "box_source": BoxSource.UNIFIED.value,
        "depth_file": depth_file,
        "depth_scale": DEPTH_SCALE,
        "objects": [object_to_dict(o) for o in scene.objects],
    }


class JsonSceneRepository(SceneRepository):
    """scene.json with a sibling 16-bit depth PNG, or an inline ``depth`` array."""

    def load_scene(self, path: str) -> Scene:
        if not os.path.exists(path):
            raise SceneFormatError(f"scene file not found: {path}")
        data = read_json(path)
        try:
            if "depth" in data:
                depth = DepthMap(np.asarray(data["depth"], dtype=float))
            else:
                depth_path = os.path.join(os.path.dirname(path), data.get("depth_file", "depth.png"))
                depth = load_depth_png(depth_path, float(data.get("depth_scale", DEPTH_SCALE)))
            scene = scene_from_dict(data, depth)
        except (KeyError, TypeError, ValueError, InvalidGeometry) as e:
            raise SceneFormatError(f"{path}: {type(e).__name__}: {e}") from e
        logger.debug(f"Loaded scene {scene.scene_id} with {len(scene.objects)} objects from {path}")
        return scene

    def save_scene(self, scene: Scene, path: str) -> None:
        depth_file = "depth.png"
        save_depth_png(scene.depth, os.path.join(os.path.dirname(path), depth_file))
        write_json(path, scene_to_dict(scene, depth_file))
