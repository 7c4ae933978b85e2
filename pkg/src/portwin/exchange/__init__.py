"""Domain partitioning, topology repository, and ghost exchange plans."""

from .nbh import FACES, FACE_AXIS, FACE_SIGN, OPPOSITE_FACE, NbhRepository, RegistrationError
from .partition import Partition, partition_morton
from .plan import (
    ExchangePlan,
    Message,
    apply_payload,
    build_exchange_plan,
    extract_payload,
    filter_plan,
    message_groups,
    run_plan_inline,
)
from .transport import ExchangeFault, LocalTransport, SocketTransport, run_plan_transport

__all__ = [
    "FACES",
    "FACE_AXIS",
    "FACE_SIGN",
    "OPPOSITE_FACE",
    "NbhRepository",
    "RegistrationError",
    "Partition",
    "partition_morton",
    "ExchangePlan",
    "Message",
    "build_exchange_plan",
    "extract_payload",
    "apply_payload",
    "filter_plan",
    "message_groups",
    "run_plan_inline",
    "ExchangeFault",
    "LocalTransport",
    "SocketTransport",
    "run_plan_transport",
]
