"""Window streaming, steering, and client gateway services."""

from .collector import (
    Collector,
    LiveSource,
    ReplaySource,
    RunController,
    build_window_response,
)
from .protocol import (
    Ack,
    BlockRecord,
    FrameReader,
    ProtocolError,
    Status,
    Steering,
    WindowRequest,
    WindowResponse,
    compress_stream,
    decode_message,
    decompress_stream,
    encode_ack,
    encode_frame,
    encode_status,
    encode_steering,
    encode_window_request,
    encode_window_response,
)
from .snapshot import Snapshot, SnapshotStore, take_snapshot
from .windows import (
    ALL_FIELDS,
    BLOCK_RECORD_BYTES,
    FIELD_BITS,
    RESPONSE_HEADER_BYTES,
    bytes_per_cell,
    count_window,
    gather_window,
    select_level,
    window_cost,
)

__all__ = [
    "Ack",
    "ALL_FIELDS",
    "BLOCK_RECORD_BYTES",
    "BlockRecord",
    "Collector",
    "FIELD_BITS",
    "FrameReader",
    "LiveSource",
    "ProtocolError",
    "RESPONSE_HEADER_BYTES",
    "ReplaySource",
    "RunController",
    "Snapshot",
    "SnapshotStore",
    "Status",
    "Steering",
    "WindowRequest",
    "WindowResponse",
    "build_window_response",
    "bytes_per_cell",
    "compress_stream",
    "count_window",
    "decode_message",
    "decompress_stream",
    "encode_ack",
    "encode_frame",
    "encode_status",
    "encode_steering",
    "encode_window_request",
    "encode_window_response",
    "gather_window",
    "select_level",
    "take_snapshot",
    "window_cost",
]
