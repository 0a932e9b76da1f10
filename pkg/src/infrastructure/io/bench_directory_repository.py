import os
from typing import List

from loguru import logger

from ...domain.entities.bench import BenchSample, TaskCategory
from ...domain.entities.trace import Trace
from ...domain.errors import InvalidGeometry, SceneFormatError
from ...domain.repositories.scene_repository import BenchRepository
from .json_scene_repository import JsonSceneRepository, box_from_dict, box_to_dict
from .jsonl import read_json, write_json
from .rle import mask_from_dict, mask_to_dict


class BenchDirectoryRepository(BenchRepository):
    """One folder per sample holding scene.json, depth.png and sample.json."""

    def __init__(self, root: str):
        self.root = root
        self.scenes = JsonSceneRepository()

    def list_samples(self) -> List[str]:
        if not os.path.isdir(self.root):
            raise SceneFormatError(f"bench directory not found: {self.root}")
        return sorted(
            name for name in os.listdir(self.root)
            if os.path.isfile(os.path.join(self.root, name, "sample.json"))
        )

    def load_sample(self, sample_id: str) -> BenchSample:
        folder = os.path.join(self.root, sample_id)
        scene = self.scenes.load_scene(os.path.join(folder, "scene.json"))
        data = read_json(os.path.join(folder, "sample.json"))
        try:
            return BenchSample(
                sample_id=sample_id,
                scene=scene,
                start_mask=mask_from_dict(data["start_mask"]),
                end_box=box_from_dict(data["end_box"]),
                reference_trace=Trace.from_records(data["reference_trace"]),
                prompt=data.get("prompt", ""),
                step_count=int(data["step_count"]),
                task_category=TaskCategory(data.get("category", TaskCategory.PICK_PLACE.value)),
                source_id=data.get("source_id"),
            )
        except (KeyError, TypeError, ValueError, InvalidGeometry) as e:
            raise SceneFormatError(f"sample {sample_id}: {type(e).__name__}: {e}") from e

    def save_sample(self, sample: BenchSample) -> None:
        folder = os.path.join(self.root, sample.sample_id)
        os.makedirs(folder, exist_ok=True)
        self.scenes.save_scene(sample.scene, os.path.join(folder, "scene.json"))
        write_json(os.path.join(folder, "sample.json"), {
            "start_mask": mask_to_dict(sample.start_mask),
            "end_box": box_to_dict(sample.end_box),
            "reference_trace": sample.reference_trace.to_records(),
            "prompt": sample.prompt,
            "step_count": sample.step_count,
            "category": sample.task_category.value,
            "source_id": sample.source_id,
        })
        logger.debug(f"Saved bench sample {sample.sample_id} to {folder}")
