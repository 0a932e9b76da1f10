from abc import ABC, abstractmethod
from typing import List

from ..entities.bench import BenchSample
from ..entities.episode import Episode
from ..entities.scene import Scene


class SceneRepository(ABC):
    @abstractmethod
    def load_scene(self, path: str) -> Scene:
        """Load a scene and its depth map"""
        pass

    @abstractmethod
    def save_scene(self, scene: Scene, path: str) -> None:
        """Persist a scene next to its depth map"""
        pass


class BenchRepository(ABC):
    @abstractmethod
    def list_samples(self) -> List[str]:
        """Sample ids in a stable order"""
        pass

    @abstractmethod
    def load_sample(self, sample_id: str) -> BenchSample:
        pass

    @abstractmethod
    def save_sample(self, sample: BenchSample) -> None:
        pass


class EpisodeRepository(ABC):
    @abstractmethod
    def load_episode(self, path: str) -> Episode:
        """Load a pre-decoded episode with per-frame depth"""
        pass
