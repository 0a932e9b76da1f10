import json
import os
from typing import Any, Dict, Iterable, Iterator, List

import numpy as np

from ...domain.errors import SceneFormatError


def round_floats(value: Any, decimals: int = 6) -> Any:
    """Recursively round floats (numpy scalars included) so output is stable across runs."""
    if isinstance(value, dict):
        return {str(k): round_floats(v, decimals) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_floats(v, decimals) for v in value]
    if isinstance(value, np.ndarray):
        return round_floats(value.tolist(), decimals)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        rounded = round(float(value), decimals)
        return 0.0 if rounded == 0 else rounded
    return value


def dumps(record: Dict[str, Any], decimals: int = 6) -> str:
    return json.dumps(round_floats(record, decimals), sort_keys=True, separators=(", ", ": "))


def write_jsonl(path: str, records: Iterable[Dict[str, Any]], decimals: int = 6) -> int:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(dumps(record, decimals) + "\n")
            count += 1
    return count


def iter_jsonl(path: str) -> Iterator[Dict[str, Any]]:
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise SceneFormatError(f"{path}:{number}: invalid JSON: {e}") from e


def read_jsonl(path: str) -> List[Dict[str, Any]]:
    return list(iter_jsonl(path))


def write_json(path: str, data: Any, decimals: int = 6) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(round_floats(data, decimals), f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path: str) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{path}: invalid JSON: {e}") from e
