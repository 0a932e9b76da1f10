from typing import Any, Dict

from ...domain.errors import SceneFormatError
from ...domain.value_objects.mask import RleMask


def mask_to_dict(mask: RleMask) -> Dict[str, Any]:
    return {"size": [mask.height, mask.width], "counts": list(mask.counts), "order": "row-major"}


def mask_from_dict(data: Dict[str, Any]) -> RleMask:
    """Row-major RLE; counts alternate zeros and ones starting with zeros."""
    try:
        height, width = (int(x) for x in data["size"])
        counts = tuple(int(c) for c in data["counts"])
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"malformed RLE mask: {e}") from e
    if data.get("order", "row-major") != "row-major":
        raise SceneFormatError(f"unsupported RLE order {data['order']!r}")
    if any(c < 0 for c in counts) or sum(counts) > height * width:
        raise SceneFormatError("RLE counts do not fit the mask size")
    return RleMask(height, width, counts)
