"""MiniP: reference protocol with handshake, sequenced data, retransmission and teardown."""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

from protocol_testbed.domain.protocol_spec import ProtocolSpec
from protocol_testbed.domain.simulation import Action, Delivered, Log, Observation, Send
from protocol_testbed.domain.value_objects import Message, NetworkParams, ms
from protocol_testbed.protocols import load_shipped_spec

PROTOCOL = "minip"
U32_MASK = 0xFFFFFFFF

# one type byte plus the encoded fields
_WIRE_SIZES = {"HELLO": 2, "HELLO_ACK": 2, "DATA": 5, "ACK": 5, "FIN": 1, "FIN_ACK": 1}


class BugId(Enum):
    """Deliberate single-behavior deviations of the MiniP server."""

    BUG_ACK = "bug_ack"
    BUG_VERSION = "bug_version"
    BUG_PREHANDSHAKE_DATA = "bug_prehandshake_data"
    BUG_NO_FINACK = "bug_no_finack"


@dataclass(frozen=True)
class MiniPParams:
    """Protocol parameters; durations in virtual nanoseconds."""

    rto: int = ms(200)
    max_retries: int = 3
    version: int = 1
    data_count: int = 3

    def validate(self) -> None:
        """Raise ValueError when a parameter is out of range."""
        if self.rto <= 0:
            raise ValueError("rto must be positive")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")
        if not 0 <= self.version <= 255:
            raise ValueError("version must fit in 8 bits")
        if self.data_count < 1:
            raise ValueError("data_count must be at least 1")


def ack_deadline(network: NetworkParams) -> int:
    """Round trip at maximum jitter plus 10 ms of slack."""
    return 2 * network.latency_base + 2 * network.jitter + ms(10)


def minip_spec(params: Optional[MiniPParams] = None, network: Optional[NetworkParams] = None) -> ProtocolSpec:
    """The MiniP specification with constants taken from params and the network."""
    params = params or MiniPParams()
    params.validate()
    return load_shipped_spec(
        PROTOCOL,
        {
            "rto": params.rto,
            "max_retries": params.max_retries,
            "version": params.version,
            "data_count": params.data_count,
            "ack_deadline": ack_deadline(network or NetworkParams()),
        },
    )


def _message(msg_type: str, **fields: int) -> Message:
    return Message(protocol=PROTOCOL, msg_type=msg_type, fields=dict(fields), size_bytes=_WIRE_SIZES[msg_type])


class MiniPServer:
    """Single-session MiniP server, correct or with one injected bug."""

    def __init__(self, bug: Optional[BugId] = None):
        self.bug = bug
        self.state = "LISTEN"
        self.version: Optional[int] = None
        self.acked: List[int] = []

    def handle(self, observation: Observation, now: int) -> List[Action]:
        """Answer deliveries; timers and idle ticks are not used."""
        if not isinstance(observation, Delivered):
            return []
        message = observation.message
        peer = observation.src
        handler = getattr(self, f"_on_{message.msg_type.lower()}", None)
        if message.protocol != PROTOCOL or handler is None:
            return [Log(f"ignored {message.msg_type}", level="warning")]
        return handler(message, peer)

    def _on_hello(self, message: Message, peer: str) -> List[Action]:
        if self.state == "CLOSED":
            return [Log("ignored HELLO after close", level="warning")]
        version = int(message.fields.get("ver", 0))
        echoed = (version + 1) & 0xFF if self.bug == BugId.BUG_VERSION else version
        self.state = "ESTABLISHED"
        self.version = version
        return [Send(_message("HELLO_ACK", ver=echoed), dst=peer)]

    def _on_data(self, message: Message, peer: str) -> List[Action]:
        seq = int(message.fields.get("seq", 0))
        accept = self.state == "ESTABLISHED" or (self.state == "LISTEN" and self.bug == BugId.BUG_PREHANDSHAKE_DATA)
        if not accept:
            return [Log(f"ignored DATA in {self.state}", level="warning")]
        acked = (seq + 1) & U32_MASK if self.bug == BugId.BUG_ACK else seq
        self.acked.append(acked)
        return [Send(_message("ACK", seq=acked), dst=peer)]

    def _on_fin(self, message: Message, peer: str) -> List[Action]:
        if self.state == "LISTEN":
            return [Log("ignored FIN before handshake", level="warning")]
        self.state = "CLOSED"
        if self.bug == BugId.BUG_NO_FINACK:
            return []
        return [Send(_message("FIN_ACK"), dst=peer)]


def minip_server(bug: Optional[BugId] = None) -> MiniPServer:
    """Endpoint handler for the correct server or the variant named by bug."""
    return MiniPServer(bug)
