"""Priority-arbitrated message bus and the pod's virtual nodes.

The bus is modelled per tick: everything published during tick T competes
for delivery at tick T+1, ``bandwidth`` messages per tick, lowest priority
value first. Nodes only ever see the previous tick's deliveries.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from podsim.battery import FaultDetector, FaultEvent, PodState
from podsim.estimation import PoseEstimate


class NodeId(str, enum.Enum):
    NAVIGATION = "navigation"
    POWER = "power"
    VEHICLE = "vehicle"
    FRONT_MODULE = "front_module"
    REAR_MODULE = "rear_module"
    LOAD = "load"


class MsgKind(str, enum.Enum):
    POSE = "pose"
    FAULT = "fault"
    MOTOR_POLL = "motor_poll"
    BRAKE_COMMAND = "brake_command"
    TELEMETRY = "telemetry"


DEFAULT_PRIORITIES = {
    MsgKind.FAULT: 0,
    MsgKind.BRAKE_COMMAND: 0,
    MsgKind.MOTOR_POLL: 1,
    MsgKind.POSE: 3,
    MsgKind.TELEMETRY: 5,
}

# CAN-style identifiers per message kind
MSG_IDS = {
    MsgKind.BRAKE_COMMAND: 0x001,
    MsgKind.FAULT: 0x010,
    MsgKind.MOTOR_POLL: 0x100,
    MsgKind.POSE: 0x300,
    MsgKind.TELEMETRY: 0x500,
}


@dataclass(frozen=True)
class BusMessage:
    priority: int
    msg_id: int
    source: str
    kind: MsgKind
    payload: Any = None
    seq: int = -1
    tick: int = -1

    @property
    def order_key(self) -> tuple[int, int]:
        return self.priority, self.seq


@dataclass
class BusLog:
    delivered: list[tuple[int, BusMessage]] = field(default_factory=list)

    def rows(self):
        for tick, m in self.delivered:
            yield tick, m.priority, m.msg_id, m.source, m.kind.value


class Bus:
    """Queue plus arbiter. Overflow evicts the lowest-priority, newest pending message.

    Priority-0 traffic is never dropped; it may push the queue past
    ``capacity`` when nothing else is left to evict.
    """

    def __init__(self, bandwidth: int = 8, capacity: int = 1024,
                 priorities: Optional[Mapping[MsgKind, int]] = None):
        if bandwidth < 1:
            raise ValueError("bandwidth must be >= 1")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.bandwidth = bandwidth
        self.capacity = capacity
        self.priorities = dict(DEFAULT_PRIORITIES)
        if priorities:
            self.priorities.update({MsgKind(k): int(v) for k, v in priorities.items()})
        self._seq = itertools.count()
        # one FIFO per priority level; seq order inside each equals publish order
        self._queues: dict[int, deque[BusMessage]] = {}
        self._size = 0
        self.dropped: list[BusMessage] = []
        self.log = BusLog()
        self.tick = 0

    def make(self, kind: MsgKind, source: str, payload=None) -> BusMessage:
        kind = MsgKind(kind)
        return BusMessage(self.priorities[kind], MSG_IDS[kind], str(source), kind, payload)

    def publish(self, msg: BusMessage) -> BusMessage:
        if msg.priority < 0:
            raise ValueError("priority must be >= 0")
        msg = BusMessage(msg.priority, msg.msg_id, msg.source, msg.kind, msg.payload, next(self._seq), self.tick)
        self._queues.setdefault(msg.priority, deque()).append(msg)
        self._size += 1
        if self._size > self.capacity:
            self._evict()
        return msg

    def send(self, kind: MsgKind, source: str, payload=None) -> BusMessage:
        return self.publish(self.make(kind, source, payload))

    def _evict(self):
        worst = max((p for p, q in self._queues.items() if q), default=0)
        if worst == 0:
            return
        self.dropped.append(self._queues[worst].pop())
        self._size -= 1

    @property
    def queue_length(self) -> int:
        return self._size

    def deliver(self) -> list[BusMessage]:
        """Advance one tick and deliver up to ``bandwidth`` messages published before it."""
        self.tick += 1
        delivered: list[BusMessage] = []
        for p in sorted(self._queues):
            q = self._queues[p]
            while q and q[0].tick < self.tick and len(delivered) < self.bandwidth:
                delivered.append(q.popleft())
            if len(delivered) == self.bandwidth:
                break
        self._size -= len(delivered)
        for m in delivered:
            self.log.delivered.append((self.tick, m))
        return delivered


def arbitrate(pending: Iterable[BusMessage], bandwidth: Optional[int] = None) -> tuple[list[BusMessage], list[BusMessage]]:
    """Winners in (priority, seq) order plus the carried-over remainder."""
    ordered = sorted(pending, key=lambda m: m.order_key)
    if bandwidth is None:
        return ordered, []
    return ordered[:bandwidth], ordered[bandwidth:]


class VehicleMode(str, enum.Enum):
    NOMINAL = "NOMINAL"
    FAULT_RECEIVED = "FAULT_RECEIVED"
    BRAKING = "BRAKING"
    STOPPED = "STOPPED"


@dataclass(frozen=True)
class NodeState:
    id: NodeId
    mode: VehicleMode = VehicleMode.NOMINAL
    last_velocity: Optional[float] = None


@dataclass(frozen=True)
class MotorReading:
    rpm: float
    torque: float
    position: float


def vehicle_controller_step(state: NodeState, inbox: Sequence[BusMessage], bus: Bus,
                            motor: Optional[MotorReading] = None,
                            stop_tolerance: float = 0.5) -> tuple[NodeState, list[BusMessage]]:
    """Emergency braking protocol.

    NOMINAL polls the motor controller every tick. A fault message moves it to
    FAULT_RECEIVED and emits a brake command in the same tick; the next tick it
    is BRAKING, and it is STOPPED once a pose report shows the pod at rest.
    """
    velocity = state.last_velocity
    for m in inbox:
        if m.kind is MsgKind.POSE:
            velocity = m.payload.vel.mean
    faulted = any(m.kind is MsgKind.FAULT for m in inbox)
    out: list[BusMessage] = []
    mode = state.mode
    src = NodeId.VEHICLE.value
    if mode is VehicleMode.NOMINAL:
        if faulted:
            mode = VehicleMode.FAULT_RECEIVED
            out.append(bus.make(MsgKind.BRAKE_COMMAND, src, {"engage": True}))
        else:
            out.append(bus.make(MsgKind.MOTOR_POLL, src, motor))
    elif mode is VehicleMode.FAULT_RECEIVED:
        mode = VehicleMode.BRAKING
    elif mode is VehicleMode.BRAKING:
        if velocity is not None and velocity <= stop_tolerance:
            mode = VehicleMode.STOPPED
    return NodeState(state.id, mode, velocity), out


def navigation_node_step(estimate: PoseEstimate, bus: Bus) -> list[BusMessage]:
    return [bus.make(MsgKind.POSE, NodeId.NAVIGATION.value, estimate)]


def pod_state_from(inbox: Sequence[BusMessage], previous: PodState) -> PodState:
    rpm, vel, acc = previous.rpm, previous.velocity, previous.accel
    for m in inbox:
        if m.kind is MsgKind.POSE:
            vel, acc = m.payload.vel.mean, m.payload.accel.mean
        elif m.kind is MsgKind.MOTOR_POLL and m.payload is not None:
            rpm = m.payload.rpm
    return PodState(rpm, vel, acc)


def power_node_step(detector: FaultDetector, samples: tuple[Sequence[float], Sequence[float]],
                    inbox: Sequence[BusMessage], bus: Bus) -> tuple[list[FaultEvent], list[BusMessage]]:
    """Feed this tick's cell samples to the detector; one priority-0 message per fault event."""
    detector.update_pod_state(pod_state_from(inbox, detector.pod_state))
    events, out = [], []
    for v1, v2 in zip(*samples):
        event = detector.feed(float(v1), float(v2))
        if event is not None:
            events.append(event)
            out.append(bus.make(MsgKind.FAULT, NodeId.POWER.value, event))
    return events, out


def relay_node_step(node: NodeId, bus: Bus, readings: Optional[dict] = None) -> list[BusMessage]:
    """Front/rear sensor modules: housekeeping readings go out as telemetry."""
    return [bus.make(MsgKind.TELEMETRY, node.value, readings or {})]


def motor_reading(velocity: float, wheel_radius: float, x: float) -> MotorReading:
    rpm = velocity / (2 * math.pi * wheel_radius) * 60.0
    return MotorReading(rpm, 0.0, x)
