from dataclasses import dataclass, field
from typing import Dict, Optional


class RejectReason:
    BLOCKLIST = "blocklist"
    OUT_OF_FRAME = "out_of_frame"
    OCCLUSION = "occlusion"
    TOO_SHORT = "too_short"
    COLLISION = "collision"
    SELF_CHECK = "self_check"


@dataclass(frozen=True)
class QcVerdict:
    accepted: bool
    reason: Optional[str] = None
    details: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def accept(cls, **details) -> "QcVerdict":
        return cls(True, None, dict(details))

    @classmethod
    def reject(cls, reason: str, **details) -> "QcVerdict":
        return cls(False, reason, dict(details))

    def to_dict(self) -> dict:
        out = {"accepted": self.accepted, "reason": self.reason}
        out.update({k: round(float(v), 6) for k, v in sorted(self.details.items())})
        return out
