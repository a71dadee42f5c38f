"""TinyQ: minimal connection-ID handshake in the style of QUIC."""

from dataclasses import dataclass
from typing import List, Optional

from protocol_testbed.domain.prng import Prng
from protocol_testbed.domain.protocol_spec import ProtocolSpec
from protocol_testbed.domain.simulation import Action, Delivered, Log, Observation, Send
from protocol_testbed.domain.value_objects import Message, NetworkParams, ms
from protocol_testbed.protocols import load_shipped_spec
from protocol_testbed.protocols.minip import ack_deadline

PROTOCOL = "tinyq"
BUG_CID = "bug_cid"

_WIRE_SIZES = {"INITIAL": 17, "HANDSHAKE_OK": 17, "APPDATA": 13}


@dataclass(frozen=True)
class TinyQParams:
    rto: int = ms(200)
    max_retries: int = 3
    app_count: int = 2

    def validate(self) -> None:
        if self.rto <= 0:
            raise ValueError("rto must be positive")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")
        if self.app_count < 1:
            raise ValueError("app_count must be at least 1")


def tinyq_spec(params: Optional[TinyQParams] = None, network: Optional[NetworkParams] = None) -> ProtocolSpec:
    """The TinyQ specification; the handshake deadline follows the network like MiniP's ack deadline."""
    params = params or TinyQParams()
    params.validate()
    return load_shipped_spec(
        PROTOCOL,
        {
            "rto": params.rto,
            "max_retries": params.max_retries,
            "app_count": params.app_count,
            "handshake_deadline": ack_deadline(network or NetworkParams()),
        },
    )


class TinyQServer:
    """
    Single-connection TinyQ server. Picks its own connection ID from a seeded
    Prng on the first INITIAL; with bug_cid it answers with dcid=0 instead of
    the client's scid.
    """

    def __init__(self, seed: int = 0, bug: Optional[str] = None):
        self.prng = Prng(seed)
        self.bug = bug
        self.state = "LISTEN"
        self.scid: Optional[int] = None
        self.peer: Optional[int] = None
        self.received: List[int] = []

    def handle(self, observation: Observation, now: int) -> List[Action]:
        if not isinstance(observation, Delivered):
            return []
        message = observation.message
        if message.protocol != PROTOCOL:
            return [Log(f"ignored {message.msg_type}", level="warning")]
        if message.msg_type == "INITIAL":
            return self._on_initial(message, observation.src)
        if message.msg_type == "APPDATA":
            return self._on_appdata(message)
        return [Log(f"ignored {message.msg_type}", level="warning")]

    def _on_initial(self, message: Message, peer: str) -> List[Action]:
        if self.scid is None:
            # zero is reserved for "no connection ID"
            self.scid = self.prng.next_u64() or 1
            self.peer = int(message.fields.get("scid", 0))
            self.state = "CONNECTED"
        dcid = 0 if self.bug == BUG_CID else int(message.fields.get("scid", 0))
        reply = Message(
            protocol=PROTOCOL,
            msg_type="HANDSHAKE_OK",
            fields={"scid": self.scid, "dcid": dcid},
            size_bytes=_WIRE_SIZES["HANDSHAKE_OK"],
        )
        return [Send(reply, dst=peer)]

    def _on_appdata(self, message: Message) -> List[Action]:
        if self.state != "CONNECTED":
            return [Log("ignored APPDATA before handshake", level="warning")]
        if message.fields.get("dcid") != self.scid:
            return [Log("ignored APPDATA for unknown connection ID", level="warning")]
        self.received.append(int(message.fields.get("seq", 0)))
        return []


def tinyq_server(seed: int = 0, bug: Optional[str] = None) -> TinyQServer:
    """Endpoint handler for the correct TinyQ server or its bug_cid variant."""
    return TinyQServer(seed, bug)
