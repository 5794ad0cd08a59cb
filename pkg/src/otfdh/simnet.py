"""Deterministic simulated radio link between device and gateway, with adversaries.

Time is a logical tick.  Every message sent on the device-gateway link passes
through the adversary first; what the adversary lets through (or substitutes)
enters the channel, which may drop or delay it.  Adversary injections bypass
loss.  The user-to-gateway leg is not simulated as a radio link: the user is
assumed to reach the gateway over an RSA-protected or offline path.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from enum import Enum

from .errors import Rejected
from .numtheory import DhParams, RandomSource
from .roles import Device, EventLog, Gateway, Phase, Role, SetupConfig, Timing, signed_params_message, user_setup
from .textbook_rsa import RsaKeyPair, RsaPublicKey, rsa_keygen
from .wire import HEADER, MsgType, WireError, WireMessage, encode_public_key, parse, serialize

ENDPOINTS = ("SD", "HG")


def _peer(name: str) -> str:
    return "HG" if name == "SD" else "SD"


def peek_type(data: bytes) -> MsgType | None:
    """Message type from the header, or None when the header is unreadable."""
    if len(data) < HEADER.size or data[:4] != b"OTFD":
        return None
    try:
        return MsgType(data[5])
    except ValueError:
        return None


@dataclass(order=True)
class _InFlight:
    deliver_time: int
    order: int
    src: str = field(compare=False)
    dst: str = field(compare=False)
    data: bytes = field(compare=False)
    tag: str | None = field(compare=False, default=None)


class Channel:
    """Lossy, delaying message queue ordered by delivery tick then send order."""

    def __init__(self, rng: RandomSource, loss_rate: float = 0.0, delay: tuple[int, int] = (1, 1)):
        if not 0.0 <= loss_rate <= 1.0:
            raise ValueError(f"loss_rate must lie in [0, 1], got {loss_rate}")
        lo, hi = delay
        if not 0 <= lo <= hi:
            raise ValueError(f"bad delay range {delay}")
        self.rng = rng
        self.loss_rate = loss_rate
        self.delay = (lo, hi)
        self._queue: list[_InFlight] = []
        self._order = 0
        self.injected = 0
        self.delivered = 0
        self.dropped = 0

    def __len__(self) -> int:
        return len(self._queue)

    def _push(self, when: int, src: str, dst: str, data: bytes, tag: str | None) -> None:
        self._order += 1
        self.injected += 1
        heapq.heappush(self._queue, _InFlight(when, self._order, src, dst, data, tag))

    def send(self, now: int, src: str, dst: str, data: bytes, tag: str | None = None) -> bool:
        """Queue ``data`` subject to loss and delay.  Returns False if it was dropped."""
        lo, hi = self.delay
        delay = lo if lo == hi else self.rng.uniform_range(lo, hi)
        if self.loss_rate > 0 and self.rng.random() < self.loss_rate:
            self.injected += 1
            self.dropped += 1
            return False
        self._push(now + delay, src, dst, data, tag)
        return True

    def inject(self, when: int, src: str, dst: str, data: bytes, tag: str | None = None) -> None:
        """Queue without loss; used by adversaries."""
        self._push(when, src, dst, data, tag)

    def due(self, now: int) -> list[_InFlight]:
        out = []
        while self._queue and self._queue[0].deliver_time <= now:
            out.append(heapq.heappop(self._queue))
        self.delivered += len(out)
        return out

    def conserved(self) -> bool:
        return self.injected == self.delivered + self.dropped + len(self._queue)


class AdversaryKind(str, Enum):
    NONE = "none"
    EAVESDROP = "eavesdrop"
    REPLAY = "replay"
    TAMPER = "tamper"
    MITM = "mitm"


class Adversary:
    """Passive base: records every byte on the link and changes nothing."""

    kind = AdversaryKind.NONE
    records_traffic = False

    def __init__(self, rng: RandomSource):
        self.rng = rng
        self.captured: list[tuple[int, str, str, bytes]] = []
        self.actions: list[dict] = []

    def _note(self, sim: Simulation, action: str, msg_type, **extra) -> None:
        self.actions.append({"time": sim.tick, "action": action,
                             "msg_type": msg_type.name if msg_type else None, **extra})

    def intercept(self, sim: Simulation, src: str, dst: str, data: bytes) -> list[bytes]:
        if self.records_traffic:
            self.captured.append((sim.tick, src, dst, data))
        return [data]

    def on_tick(self, sim: Simulation) -> None:
        pass


class Eavesdropper(Adversary):
    kind = AdversaryKind.EAVESDROP
    records_traffic = True


class Replayer(Adversary):
    """Re-injects copies of selected captured messages ``delay`` ticks later."""

    kind = AdversaryKind.REPLAY
    records_traffic = True

    def __init__(self, rng, types=(MsgType.DH_OFFER, MsgType.DATA), delay: int = 10):
        super().__init__(rng)
        self.types = frozenset(MsgType[t] if isinstance(t, str) else MsgType(t) for t in types)
        self.delay = delay
        self.injected: list[bytes] = []

    def intercept(self, sim, src, dst, data):
        out = super().intercept(sim, src, dst, data)
        mtype = peek_type(data)
        if mtype in self.types:
            self.adversary_replay(sim, src, dst, data)
        return out

    def adversary_replay(self, sim: Simulation, src: str, dst: str, data: bytes) -> None:
        sim.channel.inject(sim.tick + self.delay, src, dst, data, tag="replay")
        self.injected.append(data)
        self._note(sim, "replay", peek_type(data))


class Tamperer(Adversary):
    """Flips bits inside the first field of selected in-flight messages.

    ``indices`` picks which matching messages (0-based, in send order) are
    touched; None means all of them.  ``bits`` flips per message; 0 is the
    identity adversary.
    """

    kind = AdversaryKind.TAMPER
    records_traffic = True

    def __init__(self, rng, types=(MsgType.DATA,), indices=None, bits: int = 1):
        super().__init__(rng)
        self.types = frozenset(MsgType[t] if isinstance(t, str) else MsgType(t) for t in types)
        self.indices = None if indices is None else frozenset(indices)
        self.bits = bits
        self.seen = 0
        self.tampered: list[tuple[MsgType, int]] = []

    def intercept(self, sim, src, dst, data):
        super().intercept(sim, src, dst, data)
        mtype = peek_type(data)
        if mtype not in self.types:
            return [data]
        index = self.seen
        self.seen += 1
        if self.indices is not None and index not in self.indices or self.bits == 0:
            return [data]
        return [self.adversary_tamper(sim, data)]

    def adversary_tamper(self, sim: Simulation, data: bytes) -> bytes:
        start = HEADER.size + 4
        if len(data) <= start:
            return data
        span = min(struct.unpack_from(">I", data, HEADER.size)[0], len(data) - start)
        buf = bytearray(data)
        positions = set()
        while len(positions) < min(self.bits, 8 * span):
            positions.add(self.rng.uniform_below(8 * span))
        for bit in sorted(positions):
            buf[start + bit // 8] ^= 0x80 >> (bit % 8)
        mtype = peek_type(data)
        seq = struct.unpack_from(">Q", data, 10)[0]
        self.tampered.append((mtype, seq))
        self._note(sim, "tamper", mtype, seq=seq, bits=sorted(positions))
        return bytes(buf)


class ManInTheMiddle(Adversary):
    """Substitutes its own signed (g, p) and public key, then plays gateway.

    ``mode="substitute"`` rewrites setup, reinit and public-key replies headed
    for the device.  ``mode="forge_reinit"`` leaves setup alone and, once the
    real session is up, injects one REINIT signed with the adversary's key.
    """

    kind = AdversaryKind.MITM
    records_traffic = True

    def __init__(self, rng, rsa: RsaKeyPair, sd_pub: RsaPublicKey, dh_bits: int,
                 timing: Timing | None = None, mode: str = "substitute"):
        super().__init__(rng)
        if mode not in ("substitute", "forge_reinit"):
            raise ValueError(f"unknown MITM mode {mode!r}")
        self.rsa = rsa
        self.sd_pub = sd_pub
        self.dh_bits = dh_bits
        self.mode = mode
        self.gateway = Gateway(rsa, rng.fork("mitm-gateway"), timing=timing, log=EventLog())
        self.forged: dict[int, DhParams] = {}
        self.forged_reinit_sent = False

    @property
    def recovered_payloads(self) -> list[bytes]:
        return [p for _, _, p in self.gateway.delivered if p]

    def _forge(self, session: int) -> DhParams:
        if session not in self.forged:
            self.forged[session] = DhParams.generate(self.dh_bits, self.rng)
        return self.forged[session]

    def intercept(self, sim, src, dst, data):
        super().intercept(sim, src, dst, data)
        if self.mode != "substitute":
            return [data]
        try:
            msg = parse(data)
        except WireError:
            return [data]
        if dst == "SD":
            return [self._rewrite_for_device(sim, msg, data)]
        if msg.session_id in self.forged and msg.msg_type in (MsgType.DH_OFFER, MsgType.DATA, MsgType.DH_RESPONSE, MsgType.REINIT):
            self.adversary_mitm(sim, msg)
            return []
        return [data]

    def _rewrite_for_device(self, sim, msg: WireMessage, data: bytes) -> bytes:
        if msg.msg_type == MsgType.PUBKEY_REPLY:
            self._note(sim, "substitute_pubkey", msg.msg_type)
            return serialize(WireMessage(msg.msg_type, msg.session_id, msg.seq, (encode_public_key(self.rsa.public),)))
        if msg.msg_type in (MsgType.SETUP_HG2SD, MsgType.REINIT) and msg.fields:
            params = self._forge(msg.session_id)
            self.gateway.adopt(params, self.sd_pub, msg.session_id)
            self._note(sim, "substitute_params", msg.msg_type, session=msg.session_id)
            forged = signed_params_message(msg.msg_type, msg.session_id, params, self.rsa, self.sd_pub)
            return serialize(forged)
        return data

    def adversary_mitm(self, sim: Simulation, msg: WireMessage) -> None:
        """Terminate the device's traffic at the adversary's own gateway and answer it."""
        try:
            out = self.gateway.receive(msg, sim.tick)
        except Rejected as exc:
            self._note(sim, f"rejected:{exc.cause}", msg.msg_type)
            return
        self._note(sim, "answered", msg.msg_type, seq=msg.seq)
        for m in out:
            sim.channel.inject(sim.tick + 1, "HG", "SD", serialize(m), tag="mitm")

    def on_tick(self, sim):
        if self.mode != "forge_reinit" or self.forged_reinit_sent:
            return
        sd = sim.sd
        if sd.phase == Phase.ESTABLISHED and sim.hg.phase == Phase.ESTABLISHED:
            session = (sd.state.session_id + 1) & 0xFFFFFFFF
            forged = signed_params_message(MsgType.REINIT, session, self._forge(session), self.rsa, self.sd_pub)
            sim.channel.inject(sim.tick + 1, "HG", "SD", serialize(forged), tag="forged_reinit")
            self.forged_reinit_sent = True
            self._note(sim, "forge_reinit", MsgType.REINIT, session=session)


@dataclass
class WorldConfig:
    seed: int = 0
    setup: SetupConfig = field(default_factory=SetupConfig)
    timing: Timing = field(default_factory=Timing)
    loss_rate: float = 0.0
    delay: tuple[int, int] = (1, 1)
    max_ticks: int = 1_000_000


class Simulation:
    """One device, one gateway, one user, one adversary, one channel."""

    def __init__(self, cfg: WorldConfig, adversary_factory=None):
        self.cfg = cfg
        root = RandomSource(cfg.seed)
        self.rng = root
        self.tick = 0
        self.log = EventLog()
        self.user_rsa = rsa_keygen(cfg.setup.rsa_bits, root.fork("user-rsa")) if cfg.setup.sign_u2hg else None
        self.hg = Gateway(
            rsa_keygen(cfg.setup.rsa_bits, root.fork("hg-rsa")),
            root.fork("hg"),
            user_pub=self.user_rsa.public if self.user_rsa else None,
            require_user_signature=cfg.setup.sign_u2hg,
            prefer_prime_g=cfg.setup.prefer_prime_g,
            timing=cfg.timing,
            log=self.log,
        )
        self.sd = Device(root.fork("sd"), timing=cfg.timing, log=self.log)
        self.channel = Channel(root.fork("channel"), cfg.loss_rate, cfg.delay)
        self.record, self.setup_msg, self.setup_params = user_setup(
            self.hg.public_key, cfg.setup, root.fork("user"), self.user_rsa)
        self.endpoints = {"SD": self.sd, "HG": self.hg}
        self.adversary = (adversary_factory or (lambda sim, rng: Adversary(rng)))(self, root.fork("adversary"))
        self.app_queue: list[bytes] = []
        self.app_sent: list[bytes] = []
        self.outcomes: list[tuple[int, str, str | None, MsgType | None, str]] = []
        self.violations: list[str] = []
        self._started = False

    # -- driving ---------------------------------------------------------------

    def start(self) -> None:
        """Run the user's part: write the device, hand the setup message to the gateway."""
        if self._started:
            return
        self._started = True
        self.sd.provision(self.record, self.tick)
        self.log.append(time=self.tick, role=Role.OTTS.value, phase_from=Phase.UNPROVISIONED.value,
                        phase_to=Phase.PROVISIONED.value, msg_type=MsgType.SETUP_U2HG.name,
                        seq=self.setup_msg.seq, outcome="setup_sent")
        try:
            out = self.hg.receive(self.setup_msg, self.tick)
        except Rejected:
            out = []
        self.transmit("HG", out)

    def queue_packets(self, payloads) -> None:
        self.app_queue.extend(payloads)

    def transmit(self, src: str, messages) -> None:
        dst = _peer(src)
        for m in messages:
            for data in self.adversary.intercept(self, src, dst, serialize(m)):
                self.channel.send(self.tick, src, dst, data)

    def step(self) -> list[tuple]:
        """Advance one tick: deliver due messages, fire timers, start packets."""
        if not self._started:
            self.start()
        self.tick += 1
        events = []
        for item in self.channel.due(self.tick):
            endpoint = self.endpoints[item.dst]
            mtype = peek_type(item.data)
            try:
                out = endpoint.receive(item.data, self.tick)
                outcome = endpoint.log.records[-1]["outcome"]
            except Rejected as exc:
                out, outcome = [], f"rejected:{exc.cause}"
            record = (self.tick, item.dst, item.tag, mtype, outcome)
            self.outcomes.append(record)
            events.append(record)
            self.transmit(item.dst, out)
        if self.app_queue and self.sd.phase == Phase.ESTABLISHED:
            for payload in self.app_queue:
                self.sd.send(payload)
                self.app_sent.append(payload)
            self.app_queue.clear()
        for name in ENDPOINTS:
            self.transmit(name, self.endpoints[name].poll(self.tick))
        self.adversary.on_tick(self)
        self.check_invariants()
        return events

    def idle(self) -> bool:
        return not len(self.channel) and not any(e.busy for e in self.endpoints.values())

    def run(self) -> Simulation:
        if not self._started:
            self.start()
        while self.tick < self.cfg.max_ticks:
            self.step()
            if self.idle():
                break
        return self

    # -- checks ------------------------------------------------------------------

    def check_invariants(self) -> None:
        sd, hg = self.sd.state, self.hg.state
        if (sd.phase == hg.phase == Phase.ESTABLISHED and sd.session_id == hg.session_id
                and sd.params != hg.params):
            self.violations.append(f"tick {self.tick}: established with different (g, p)")
        if not self.channel.conserved():
            self.violations.append(f"tick {self.tick}: channel lost track of a message")

    def delivered_payloads(self) -> list[bytes]:
        """Application payloads the gateway delivered (keep-alives excluded)."""
        return [p for _, _, p in self.hg.delivered if p]
