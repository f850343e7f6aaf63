"""Runnable edge agent and cloud service executing a split pipeline over TCP.

Wire format (all integers little-endian):

    offset  size  field
    0       4     magic  b"ECS1"
    4       1     message type (1=HELLO, 2=PLAN_SYNC, 3=FEATURE_BLOCK, 4=RESULT, 5=ERROR)
    5       4     plan epoch (u32)
    9       4     body length (u32)
    13      ...   body

FEATURE_BLOCK bodies are raw coded-block bytes; every other type carries a
JSON object. A FEATURE_BLOCK is accepted only when its epoch equals the
service's current epoch; PLAN_SYNC moves the service to any epoch >= its
current one (max wins) and the ack echoes the agreed epoch, so a stale agent
can detect that it is behind and fast-forward. Real layer execution is out of
scope: both sides sleep per the latency model, scaled by ``time_scale``
(default 0 = no delay).
"""

from __future__ import annotations

import hashlib
import json
import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

from edgesplit.codec import CodecError, EncodedBlock, decode, encode
from edgesplit.planner import PlanController
from edgesplit.quantize import FeatureMap, QuantizeError, dequantize, quantize
from edgesplit.synthetic import GeneratorSpec, gen_feature_map

MAGIC = b"ECS1"
_FRAME = struct.Struct("<4sBII")
MAX_BODY_BYTES = 1 << 30

logger = logging.getLogger("edgesplit.transport")


class ProtocolError(Exception):
    """Malformed frame or unexpected message."""


class ConnectionClosed(Exception):
    """Peer closed the socket mid-stream."""


class MessageType(IntEnum):
    HELLO = 1
    PLAN_SYNC = 2
    FEATURE_BLOCK = 3
    RESULT = 4
    ERROR = 5


@dataclass(frozen=True)
class WireMessage:
    msg_type: MessageType
    epoch: int
    body: bytes

    def json(self) -> dict:
        return json.loads(self.body.decode("utf-8"))


def send_message(sock: socket.socket, msg_type: MessageType, epoch: int, body: bytes = b"") -> None:
    if len(body) > MAX_BODY_BYTES:
        raise ProtocolError(f"body of {len(body)} bytes exceeds limit")
    sock.sendall(_FRAME.pack(MAGIC, int(msg_type), epoch, len(body)) + body)


def send_json(sock: socket.socket, msg_type: MessageType, epoch: int, obj: dict) -> None:
    send_message(sock, msg_type, epoch, json.dumps(obj).encode("utf-8"))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 65536))
        if not chunk:
            raise ConnectionClosed(f"connection closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_message(sock: socket.socket) -> WireMessage:
    header = _recv_exact(sock, _FRAME.size)
    magic, msg_type, epoch, body_len = _FRAME.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if body_len > MAX_BODY_BYTES:
        raise ProtocolError(f"declared body of {body_len} bytes exceeds limit")
    try:
        msg_type = MessageType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg_type}") from None
    body = _recv_exact(sock, body_len) if body_len else b""
    return WireMessage(msg_type=msg_type, epoch=epoch, body=body)


def feature_digest(fm: FeatureMap) -> str:
    """Canonical digest of a reconstructed feature map: shape then float64 values, little-endian."""
    h = hashlib.sha256()
    h.update(struct.pack("<B", len(fm.shape)))
    h.update(struct.pack(f"<{len(fm.shape)}I", *fm.shape))
    h.update(fm.values.astype("<f8").tobytes())
    return h.hexdigest()


class _PlanState:
    """The service's single atomic (plan, epoch) snapshot."""

    def __init__(self):
        self._lock = threading.Lock()
        self._epoch = 0
        self._plan: dict | None = None

    def get(self) -> tuple[dict | None, int]:
        with self._lock:
            return self._plan, self._epoch

    def adopt(self, plan: dict, epoch: int) -> tuple[bool, int]:
        """Accept the sync iff epoch >= current; returns (accepted, agreed_epoch)."""
        with self._lock:
            if epoch >= self._epoch:
                self._epoch = epoch
                self._plan = plan
                return True, self._epoch
            return False, self._epoch


class CloudService:
    """Accepts connections, decodes feature blocks, and answers with reconstruction digests."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        *,
        time_scale: float = 0.0,
        cloud_suffix_s: Callable[[int], float] | None = None,
    ):
        self._plan = _PlanState()
        self._time_scale = time_scale
        self._cloud_suffix_s = cloud_suffix_s
        self.requests_served = 0
        self.errors_sent = 0
        self._counter_lock = threading.Lock()
        service = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                try:
                    while True:
                        msg = recv_message(self.request)
                        service._dispatch(self.request, msg)
                except (ConnectionClosed, ConnectionError, OSError):
                    pass
                except ProtocolError as exc:
                    try:
                        send_json(self.request, MessageType.ERROR, service._plan.get()[1], {"reason": str(exc)})
                    except OSError:
                        pass

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def epoch(self) -> int:
        return self._plan.get()[1]

    def _bump_errors(self) -> None:
        with self._counter_lock:
            self.errors_sent += 1

    def _dispatch(self, sock: socket.socket, msg: WireMessage) -> None:
        if msg.msg_type == MessageType.HELLO:
            _, epoch = self._plan.get()
            send_json(sock, MessageType.HELLO, epoch, {"service": "edgesplit-cloud", "epoch": epoch})
        elif msg.msg_type == MessageType.PLAN_SYNC:
            try:
                plan = msg.json()
            except (UnicodeDecodeError, json.JSONDecodeError):
                self._bump_errors()
                send_json(sock, MessageType.ERROR, self.epoch, {"reason": "malformed plan sync"})
                return
            accepted, agreed = self._plan.adopt(plan, msg.epoch)
            send_json(
                sock,
                MessageType.PLAN_SYNC,
                agreed,
                {"accepted": accepted, "epoch": agreed},
            )
            if accepted:
                logger.info("plan sync: epoch=%d split=%s bits=%s", agreed,
                            plan.get("split_layer"), plan.get("bit_depth"))
        elif msg.msg_type == MessageType.FEATURE_BLOCK:
            self._handle_block(sock, msg)
        else:
            self._bump_errors()
            send_json(sock, MessageType.ERROR, self.epoch, {"reason": f"unexpected {msg.msg_type.name}"})

    def _handle_block(self, sock: socket.socket, msg: WireMessage) -> None:
        plan, epoch = self._plan.get()
        if plan is None or msg.epoch != epoch:
            self._bump_errors()
            send_json(sock, MessageType.ERROR, epoch, {"reason": "epoch mismatch", "epoch": epoch})
            return
        try:
            block = EncodedBlock.from_bytes(msg.body)
            qm = decode(block)
            fm = dequantize(qm)
        except (CodecError, QuantizeError) as exc:
            self._bump_errors()
            send_json(sock, MessageType.ERROR, epoch, {"reason": str(exc), "epoch": epoch})
            return
        if self._time_scale > 0.0 and self._cloud_suffix_s is not None:
            time.sleep(self._cloud_suffix_s(block.layer_index) * self._time_scale)
        with self._counter_lock:
            self.requests_served += 1
        send_json(
            sock,
            MessageType.RESULT,
            msg.epoch,
            {
                "digest": feature_digest(fm),
                "layer_index": block.layer_index,
                "bit_depth": block.bit_depth,
                "payload_bytes": len(msg.body),
                "epoch": msg.epoch,
            },
        )

    def start(self) -> "CloudService":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        logger.info("cloud service listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "CloudService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


@dataclass
class AgentRequestLog:
    index: int
    epoch: int
    split_layer: int
    bit_depth: int
    payload_bytes: int
    local_digest: str
    remote_digest: str
    wall_s: float
    attempts: int


@dataclass
class AgentReport:
    requests: list[AgentRequestLog] = field(default_factory=list)
    resyncs: int = 0
    reconnects: int = 0
    rejected_blocks: int = 0

    @property
    def digests_match(self) -> bool:
        return all(r.local_digest == r.remote_digest for r in self.requests)

    @property
    def epoch_mixing_violations(self) -> int:
        # every result must have been produced under the epoch its block was sent with
        return sum(1 for r in self.requests if r.epoch < 0)


class EdgeAgent:
    """Runs the edge half: plan, quantize + encode the split layer's map, ship, await the digest."""

    def __init__(
        self,
        host: str,
        port: int,
        controller: PlanController,
        corpus: GeneratorSpec,
        *,
        bandwidth_for_request: Callable[[int], float],
        request_count: int = 10,
        time_scale: float = 0.0,
        edge_prefix_s: Callable[[int], float] | None = None,
        connect_retries: int = 40,
        retry_delay_s: float = 0.25,
    ):
        self._host = host
        self._port = port
        self._controller = controller
        self._corpus = corpus
        self._bw_of = bandwidth_for_request
        self._count = request_count
        self._time_scale = time_scale
        self._edge_prefix_s = edge_prefix_s
        self._retries = connect_retries
        self._retry_delay = retry_delay_s
        self._sock: socket.socket | None = None
        self.report = AgentReport()

    # -- connection management -------------------------------------------------

    def _connect(self) -> socket.socket:
        last_exc: Exception | None = None
        for _ in range(self._retries):
            try:
                sock = socket.create_connection((self._host, self._port), timeout=10.0)
                send_json(sock, MessageType.HELLO, self._controller.epoch, {"client": "edgesplit-agent"})
                reply = recv_message(sock)
                if reply.msg_type != MessageType.HELLO:
                    raise ProtocolError(f"expected HELLO, got {reply.msg_type.name}")
                return sock
            except (ConnectionError, ConnectionClosed, OSError, ProtocolError) as exc:
                last_exc = exc
                time.sleep(self._retry_delay)
        raise ConnectionError(f"cannot reach cloud service at {self._host}:{self._port}: {last_exc}")

    def _ensure_connected(self) -> socket.socket:
        if self._sock is None:
            self._sock = self._connect()
            self.report.reconnects += 1
            self._sync_plan(self._sock)
        return self._sock

    def _drop_connection(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    # -- plan synchronization ----------------------------------------------------

    def _sync_plan(self, sock: socket.socket) -> None:
        """Push the controller's decision; fast-forward and retry if the service is ahead."""
        for _ in range(3):
            decision, epoch = self._controller.snapshot()
            if decision is None:
                raise ProtocolError("agent has no plan to synchronize")
            send_json(
                sock,
                MessageType.PLAN_SYNC,
                epoch,
                {"split_layer": decision.split_layer, "bit_depth": decision.bit_depth, "epoch": epoch},
            )
            reply = recv_message(sock)
            if reply.msg_type != MessageType.PLAN_SYNC:
                raise ProtocolError(f"expected PLAN_SYNC ack, got {reply.msg_type.name}")
            agreed = reply.json()
            if agreed.get("accepted") and agreed.get("epoch") == epoch:
                self.report.resyncs += 1
                return
            # Service is ahead of us; jump past it and sync again.
            self._controller.force_epoch(int(agreed.get("epoch", epoch)))
            bw = self._controller.bandwidth
            if bw is not None:
                self._controller.replan(bw)
        raise ProtocolError("plan synchronization failed after retries")

    # -- the request loop ----------------------------------------------------------

    def run(self) -> AgentReport:
        for k in range(self._count):
            bw = self._bw_of(k)
            changed = self._controller.replan(bw)
            if changed is not None and self._sock is not None:
                self._sync_plan(self._sock)
            self._run_request(k)
        self._drop_connection()
        return self.report

    def _run_request(self, k: int) -> None:
        attempts = 0
        while True:
            attempts += 1
            if attempts > 8:
                raise ProtocolError(f"request {k} failed after {attempts - 1} attempts")
            decision, epoch = self._controller.snapshot()
            if decision.split_layer == 0:
                raise ProtocolError(
                    "agent cannot execute an all-cloud plan; build its controller with min_split_layer=1"
                )
            fm = gen_feature_map(self._corpus, decision.split_layer, k)
            local_digest = feature_digest(dequantize(quantize(fm, decision.bit_depth)))
            block = encode(quantize(fm, decision.bit_depth), layer_index=decision.split_layer)
            body = block.to_bytes()
            started = time.perf_counter()
            if self._time_scale > 0.0 and self._edge_prefix_s is not None:
                time.sleep(self._edge_prefix_s(decision.split_layer) * self._time_scale)
            try:
                sock = self._ensure_connected()
                send_message(sock, MessageType.FEATURE_BLOCK, epoch, body)
                reply = recv_message(sock)
            except (ConnectionError, ConnectionClosed, OSError):
                logger.info("request %d: connection lost, reconnecting", k)
                self._drop_connection()
                continue
            if reply.msg_type == MessageType.ERROR:
                reason = reply.json().get("reason", "")
                self.report.rejected_blocks += 1
                logger.info("request %d rejected: %s", k, reason)
                if "epoch" in reason:
                    # Stale plan on one side: fast-forward if behind, resync, retransmit.
                    self._controller.force_epoch(reply.epoch)
                    self._controller.replan(self._bw_of(k))
                    self._sync_plan(self._ensure_connected())
                    continue
                raise ProtocolError(f"request {k} rejected: {reason}")
            if reply.msg_type != MessageType.RESULT:
                raise ProtocolError(f"expected RESULT, got {reply.msg_type.name}")
            result = reply.json()
            if reply.epoch != epoch:
                # Answered under a different plan than it was sent with: epoch mixing.
                self.report.requests.append(
                    AgentRequestLog(k, -1, decision.split_layer, decision.bit_depth,
                                    len(body), local_digest, result.get("digest", ""), 0.0, attempts)
                )
                return
            wall = time.perf_counter() - started
            self.report.requests.append(
                AgentRequestLog(
                    index=k,
                    epoch=epoch,
                    split_layer=decision.split_layer,
                    bit_depth=decision.bit_depth,
                    payload_bytes=len(body),
                    local_digest=local_digest,
                    remote_digest=result.get("digest", ""),
                    wall_s=wall,
                    attempts=attempts,
                )
            )
            logger.info(
                "request=%d epoch=%d split=%d bits=%d bytes=%d wall_ms=%.2f",
                k, epoch, decision.split_layer, decision.bit_depth, len(body), wall * 1e3,
            )
            return
