"""Protocol roles: the user (one-time trusted server), the home gateway, the smart device.

Endpoints are driven from outside.  ``receive(data, now)`` processes one inbound
message and returns the messages it answers with, or raises :class:`Rejected`.
``poll(now)`` fires timers and starts queued packets.  Every processed message
and every timer-driven transition appends one record to the endpoint's
:class:`EventLog`.

Per packet the sender offers a fresh DH public value, the receiver answers with
its own, and the sender ships the frame XORed with the resulting pad.  Neither
side keeps a key once its packet is done.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .dh import DhEphemeral, SharedKey, check_public_value, dh_combine, dh_offer, xor_otp
from .errors import AuthenticationError, DecodeError, ParameterError, ProtocolError, Rejected
from .numtheory import DhParams, RandomSource
from .textbook_rsa import (
    RsaKeyPair,
    RsaPublicKey,
    rsa_decrypt,
    rsa_encrypt,
    rsa_keygen,
    rsa_sign,
    rsa_unapply,
    rsa_verify,
)
from .wire import (
    FRAME_OVERHEAD,
    MsgType,
    WireError,
    WireMessage,
    decode_int,
    decode_params,
    decode_public_key,
    encode_int,
    encode_params,
    encode_public_key,
    frame_pack,
    frame_unpack,
    pack_fields,
    parse,
    unpack_fields,
)


class Role(str, Enum):
    SD = "SD"
    HG = "HG"
    OTTS = "OTTS"


class Phase(str, Enum):
    UNPROVISIONED = "UNPROVISIONED"
    PROVISIONED = "PROVISIONED"
    SETUP_PENDING = "SETUP_PENDING"
    ESTABLISHED = "ESTABLISHED"
    REINIT_PENDING = "REINIT_PENDING"
    FAILED = "FAILED"


@dataclass
class SetupConfig:
    dh_bits: int = 256
    rsa_bits: int = 512
    sign_u2hg: bool = False
    preinstall_hg_pub: bool = True
    prefer_prime_g: bool = True


@dataclass
class Timing:
    """Logical-tick timers and retry budgets."""

    response_timeout: int = 10
    setup_timeout: int = 20
    max_retries: int = 3
    max_reinits: int = 3
    # consecutive integrity failures before the receiver asks for fresh (g, p); None disables
    crc_reinit_threshold: int | None = None
    keepalive_on_establish: bool = True


@dataclass(frozen=True)
class ProvisioningRecord:
    """What the user writes directly into the device."""

    sd_priv: RsaKeyPair
    hg_pub_preinstalled: RsaPublicKey | None = None


@dataclass
class RoleState:
    role: Role
    phase: Phase = Phase.UNPROVISIONED
    params: DhParams | None = None
    own_rsa: RsaKeyPair | None = None
    peer_pub: RsaPublicKey | None = None
    session_id: int = 0
    send_seq: int = 0
    recv_seq: int = 0
    pending_ephemeral: DhEphemeral | None = None


class EventLog:
    FIELDS = ("time", "role", "phase_from", "phase_to", "msg_type", "seq", "outcome", "detail")

    def __init__(self):
        self.records: list[dict] = []

    def append(self, **record) -> None:
        self.records.append({k: record.get(k) for k in self.FIELDS})

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @staticmethod
    def read(path) -> list[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


def user_setup(
    hg_pub: RsaPublicKey,
    cfg: SetupConfig,
    rng: RandomSource,
    user_rsa: RsaKeyPair | None = None,
    session_id: int | None = None,
) -> tuple[ProvisioningRecord, WireMessage, DhParams]:
    """The user's side of setup.

    Generates the device's one-time RSA pair and the structural pair (g, p),
    and returns the record to write into the device, the SETUP_U2HG message
    for the gateway, and the generated parameters.
    """
    if cfg.sign_u2hg and user_rsa is None:
        raise ParameterError("sign_u2hg needs the user's own RSA key pair")
    sd_key = rsa_keygen(cfg.rsa_bits, rng)
    params = DhParams.generate(cfg.dh_bits, rng, cfg.prefer_prime_g)
    body = [encode_params(params), encode_public_key(sd_key.public)]
    if cfg.sign_u2hg:
        body.append(rsa_sign(pack_fields(body), user_rsa))
    if session_id is None:
        session_id = rng.uniform_range(1, (1 << 31) - 1)
    msg = WireMessage(MsgType.SETUP_U2HG, session_id, 0, (rsa_encrypt(pack_fields(body), hg_pub),))
    record = ProvisioningRecord(sd_key, hg_pub if cfg.preinstall_hg_pub else None)
    return record, msg, params


def signed_params_message(msg_type: MsgType, session_id: int, params: DhParams,
                          signer: RsaKeyPair, recipient: RsaPublicKey) -> WireMessage:
    """E_{recipient}((g, p) || E_{signer priv}(g, p)) as a one-field message."""
    blob = encode_params(params)
    plaintext = pack_fields([blob, rsa_sign(blob, signer)])
    return WireMessage(msg_type, session_id, 0, (rsa_encrypt(plaintext, recipient),))


@dataclass
class _Inflight:
    seq: int
    payload: bytes
    offer: WireMessage
    deadline: int
    retries: int = 0


class Endpoint:
    """Shared per-packet data path for both ends of the device-gateway link."""

    role: Role

    def __init__(self, rng: RandomSource, timing: Timing | None = None, log: EventLog | None = None):
        self.rng = rng
        self.timing = timing or Timing()
        self.log = log if log is not None else EventLog()
        self.state = RoleState(self.role)
        self.now = 0
        self.outbox: deque[bytes] = deque()
        self.inflight: _Inflight | None = None
        self.responder_keys: dict[int, tuple[bytes, SharedKey]] = {}
        self.delivered: list[tuple[int, int, bytes]] = []
        self.sent: list[tuple[int, int, bytes]] = []
        self.key_fingerprints: dict[int, list[str]] = {}
        self.integrity_failures = 0
        self.reinit_wanted = False
        self._handlers = {
            MsgType.DH_OFFER: self._on_offer,
            MsgType.DH_RESPONSE: self._on_response,
            MsgType.DATA: self._on_data,
        }

    # -- bookkeeping ---------------------------------------------------------

    @property
    def phase(self) -> Phase:
        return self.state.phase

    def _event(self, phase_from, msg_type, seq, outcome, detail=None):
        self.log.append(
            time=self.now,
            role=self.role.value,
            phase_from=phase_from.value,
            phase_to=self.state.phase.value,
            msg_type=msg_type.name if msg_type is not None else None,
            seq=seq,
            outcome=outcome,
            detail=detail,
        )

    def _reset_session(self, params: DhParams | None, session_id: int) -> None:
        self.state.params = params
        self.state.session_id = session_id
        self.state.send_seq = 0
        self.state.recv_seq = 0
        self.state.pending_ephemeral = None
        self.responder_keys.clear()
        self.integrity_failures = 0
        if self.inflight is not None:
            # DATA never left, so the payload is still owed
            self.outbox.appendleft(self.inflight.payload)
            self.inflight = None

    @property
    def busy(self) -> bool:
        if self.inflight is not None or self.reinit_wanted:
            return True
        return bool(self.outbox) and self.state.phase == Phase.ESTABLISHED

    def max_payload(self) -> int:
        if self.state.params is None:
            raise ProtocolError("no parameters established")
        return self.state.params.width - FRAME_OVERHEAD

    # -- application interface -----------------------------------------------

    def send(self, payload: bytes) -> int:
        """Queue ``payload``, fragmented so each piece fits one pad.  Returns the fragment count."""
        limit = self.max_payload()
        if limit < 0 or (limit == 0 and payload):
            raise ProtocolError(f"pad of {self.state.params.width} bytes cannot carry a {FRAME_OVERHEAD}-byte frame")
        pieces = [payload[i : i + limit] for i in range(0, len(payload), limit)] if payload else [b""]
        self.outbox.extend(pieces)
        return len(pieces)

    def receive(self, data, now: int) -> list[WireMessage]:
        self.now = now
        before = self.state.phase
        try:
            msg = data if isinstance(data, WireMessage) else parse(data)
        except WireError as exc:
            self._event(before, None, None, f"rejected:{exc.code}", str(exc))
            raise Rejected(exc.code, str(exc)) from exc
        handler = self._handlers.get(msg.msg_type)
        try:
            if handler is None:
                raise Rejected("unexpected_type", msg.msg_type.name)
            outcome, out = handler(msg)
        except Rejected as exc:
            self._event(before, msg.msg_type, msg.seq, f"rejected:{exc.cause}", exc.detail or None)
            raise
        self._event(before, msg.msg_type, msg.seq, outcome)
        return out

    def poll(self, now: int) -> list[WireMessage]:
        self.now = now
        out = self._timers()
        if self.reinit_wanted:
            out += self._request_reinit()
        if self.state.phase == Phase.ESTABLISHED and self.inflight is None and self.outbox:
            out.append(self._start_packet(self.outbox.popleft()))
        return out

    # -- data path -------------------------------------------------------------

    def _start_packet(self, payload: bytes) -> WireMessage:
        st = self.state
        st.send_seq += 1
        eph = dh_offer(st.params, self.rng)
        st.pending_ephemeral = eph
        offer = WireMessage(MsgType.DH_OFFER, st.session_id, st.send_seq, (encode_int(eph.public_value),))
        self.inflight = _Inflight(st.send_seq, payload, offer, self.now + self.timing.response_timeout)
        self._event(st.phase, MsgType.DH_OFFER, st.send_seq, "offer_sent")
        return offer

    def _data_phases(self) -> tuple[Phase, ...]:
        return (Phase.ESTABLISHED, Phase.REINIT_PENDING)

    def _check_session(self, msg: WireMessage) -> None:
        if self.state.params is None or self.state.phase not in self._data_phases():
            raise Rejected("not_established")
        if msg.session_id != self.state.session_id:
            raise Rejected("session_mismatch", f"got {msg.session_id}, expected {self.state.session_id}")
        if len(msg.fields) != 1:
            raise Rejected("malformed", f"{len(msg.fields)} fields")

    def _integrity_failure(self) -> None:
        self.integrity_failures += 1
        limit = self.timing.crc_reinit_threshold
        if limit is not None and self.integrity_failures >= limit:
            self.reinit_wanted = True

    def _decode_public(self, raw: bytes) -> int:
        try:
            value = decode_int(raw)
            check_public_value(value, self.state.params)
        except (DecodeError, ProtocolError) as exc:
            self._integrity_failure()
            raise Rejected("bad_public", str(exc)) from exc
        return value

    def _on_offer(self, msg: WireMessage):
        self._check_session(msg)
        st = self.state
        if self.reinit_wanted:
            raise Rejected("reinit_pending", "no new keys under parameters about to be replaced")
        if msg.seq <= st.recv_seq:
            raise Rejected("stale_offer", f"seq {msg.seq} <= {st.recv_seq}")
        if msg.seq in self.responder_keys:
            # retransmitted offer: answer with the same value, never a second key
            y, _ = self.responder_keys[msg.seq]
            return "duplicate_offer", [WireMessage(MsgType.DH_RESPONSE, st.session_id, msg.seq, (y,))]
        x = self._decode_public(msg.fields[0])
        eph = dh_offer(st.params, self.rng)
        y = encode_int(eph.public_value)
        self.responder_keys[msg.seq] = (y, dh_combine(eph, x))
        while len(self.responder_keys) > 16:
            del self.responder_keys[min(self.responder_keys)]
        return "response_sent", [WireMessage(MsgType.DH_RESPONSE, st.session_id, msg.seq, (y,))]

    def _on_response(self, msg: WireMessage):
        self._check_session(msg)
        st, job = self.state, self.inflight
        if job is None or job.seq != msg.seq:
            raise Rejected("unexpected_response", f"seq {msg.seq}")
        y = self._decode_public(msg.fields[0])
        key = dh_combine(st.pending_ephemeral, y)
        ct = xor_otp(frame_pack(job.seq, job.payload), key)
        self.key_fingerprints.setdefault(st.session_id, []).append(key.fingerprint)
        self.sent.append((st.session_id, job.seq, job.payload))
        st.pending_ephemeral = None
        self.inflight = None
        return "data_sent", [WireMessage(MsgType.DATA, st.session_id, job.seq, (ct,))]

    def _on_data(self, msg: WireMessage):
        self._check_session(msg)
        st = self.state
        entry = self.responder_keys.pop(msg.seq, None)
        if entry is None:
            raise Rejected("orphan_data", f"no key for seq {msg.seq}")
        key = entry[1]
        ct = msg.fields[0]
        if len(ct) > len(key.otp):
            raise Rejected("oversize", f"{len(ct)} > {len(key.otp)}")
        try:
            frame = frame_unpack(xor_otp(ct, key))
        except WireError as exc:
            self._integrity_failure()
            raise Rejected("crc", str(exc)) from exc
        if frame.seq != msg.seq or frame.seq <= st.recv_seq:
            raise Rejected("stale_seq", f"frame seq {frame.seq}, last {st.recv_seq}")
        st.recv_seq = frame.seq
        for s in [s for s in self.responder_keys if s < frame.seq]:
            del self.responder_keys[s]
        self.integrity_failures = 0
        self.key_fingerprints.setdefault(st.session_id, []).append(key.fingerprint)
        self.delivered.append((st.session_id, frame.seq, frame.payload))
        return "delivered", []

    # -- timers ------------------------------------------------------------------

    def _timers(self) -> list[WireMessage]:
        job = self.inflight
        if job is None or self.now < job.deadline:
            return []
        before = self.state.phase
        if job.retries < self.timing.max_retries:
            job.retries += 1
            job.deadline = self.now + self.timing.response_timeout
            self._event(before, MsgType.DH_OFFER, job.seq, "offer_retransmitted")
            return [job.offer]
        self.outbox.appendleft(job.payload)
        self.inflight = None
        self.state.pending_ephemeral = None
        self.reinit_wanted = True
        self._event(before, MsgType.DH_OFFER, job.seq, "retries_exhausted")
        return []

    def _request_reinit(self) -> list[WireMessage]:
        raise NotImplementedError


class Gateway(Endpoint):
    """The home gateway: holds a long-term RSA pair and learns (g, p) from the user."""

    role = Role.HG

    def __init__(self, rsa: RsaKeyPair, rng: RandomSource, *, user_pub: RsaPublicKey | None = None,
                 require_user_signature: bool = False, prefer_prime_g: bool = True,
                 timing: Timing | None = None, log: EventLog | None = None):
        super().__init__(rng, timing, log)
        self.state.own_rsa = rsa
        self.user_pub = user_pub
        self.require_user_signature = require_user_signature
        self.prefer_prime_g = prefer_prime_g
        self.seen_sessions: set[int] = set()
        self.reinit_count = 0
        self.params_history: list[DhParams] = []
        self._last_setup: WireMessage | None = None
        self._setup_deadline = 0
        self._setup_retries = 0
        self._handlers.update({
            MsgType.SETUP_U2HG: self._on_setup,
            MsgType.PUBKEY_REQUEST: self._on_pubkey_request,
            MsgType.REINIT: self._on_reinit_request,
        })

    @property
    def public_key(self) -> RsaPublicKey:
        return self.state.own_rsa.public

    @property
    def busy(self) -> bool:
        waiting = self.state.phase in (Phase.SETUP_PENDING, Phase.REINIT_PENDING) and self._last_setup is not None
        return waiting or super().busy

    def _data_phases(self):
        return (Phase.ESTABLISHED, Phase.SETUP_PENDING, Phase.REINIT_PENDING)

    def _fail(self, exc: Rejected) -> Rejected:
        self.state.phase = Phase.FAILED
        return exc

    def _on_setup(self, msg: WireMessage):
        if msg.session_id in self.seen_sessions:
            raise Rejected("stale_session", f"session {msg.session_id} already used")
        if len(msg.fields) != 1:
            raise self._fail(Rejected("malformed", "SETUP_U2HG carries one field"))
        try:
            body = unpack_fields(rsa_decrypt(msg.fields[0], self.state.own_rsa))
        except DecodeError as exc:
            raise self._fail(Rejected("decrypt", str(exc))) from exc
        if len(body) not in (2, 3):
            raise self._fail(Rejected("malformed", f"{len(body)} setup fields"))
        if len(body) == 3:
            if self.user_pub is None or not rsa_verify(pack_fields(body[:2]), body[2], self.user_pub):
                raise self._fail(AuthenticationError("user signature does not verify"))
        elif self.require_user_signature:
            raise self._fail(AuthenticationError("unsigned setup message"))
        try:
            params = decode_params(body[0])
            sd_pub = decode_public_key(body[1])
        except (DecodeError, ParameterError) as exc:
            raise self._fail(Rejected("invalid_params", str(exc))) from exc
        self.seen_sessions.add(msg.session_id)
        self.state.peer_pub = sd_pub
        self._reset_session(params, msg.session_id)
        self.params_history.append(params)
        self.reinit_count = 0
        self.state.phase = Phase.SETUP_PENDING
        reply = signed_params_message(MsgType.SETUP_HG2SD, msg.session_id, params, self.state.own_rsa, sd_pub)
        self._arm_setup(reply)
        return "setup_accepted", [reply]

    def _arm_setup(self, message: WireMessage) -> None:
        self._last_setup = message
        self._setup_deadline = self.now + self.timing.setup_timeout
        self._setup_retries = 0

    def adopt(self, params: DhParams, sd_pub: RsaPublicKey, session_id: int) -> None:
        """Bind to a device session set up out of band; used by the man-in-the-middle."""
        self.state.peer_pub = sd_pub
        self._reset_session(params, session_id)
        self.params_history.append(params)
        self.state.phase = Phase.SETUP_PENDING
        self._last_setup = None

    def _on_offer(self, msg: WireMessage):
        result = super()._on_offer(msg)
        if self.state.phase in (Phase.SETUP_PENDING, Phase.REINIT_PENDING):
            # an offer under the new session means the device accepted (g, p)
            self.state.phase = Phase.ESTABLISHED
            self._last_setup = None
            self.reinit_count = 0
            return "established", result[1]
        return result

    def _on_pubkey_request(self, msg: WireMessage):
        reply = WireMessage(MsgType.PUBKEY_REPLY, msg.session_id, msg.seq, (encode_public_key(self.public_key),))
        return "pubkey_sent", [reply]

    def _on_reinit_request(self, msg: WireMessage):
        st = self.state
        if msg.fields:
            raise Rejected("malformed", "reinit request carries no fields")
        pending = st.phase in (Phase.SETUP_PENDING, Phase.REINIT_PENDING)
        current = st.phase == Phase.ESTABLISHED and msg.session_id == st.session_id
        if not (pending or current):
            raise Rejected("stale_reinit_request", f"session {msg.session_id} in {st.phase.value}")
        try:
            out = self._reinit_message()
        except ProtocolError as exc:
            raise Rejected("reinit_refused", str(exc)) from exc
        return "reinit_sent", [out]

    def _reinit_message(self) -> WireMessage:
        st = self.state
        if st.phase == Phase.UNPROVISIONED or st.peer_pub is None or st.params is None:
            raise ProtocolError("no device is bound to this gateway")
        if self.reinit_count >= self.timing.max_reinits:
            st.phase = Phase.FAILED
            self._last_setup = None
            raise ProtocolError("reinit budget exhausted; the user must run setup again")
        self.reinit_count += 1
        params = DhParams.generate(st.params.p.bit_length(), self.rng, self.prefer_prime_g)
        session = (st.session_id + 1) & 0xFFFFFFFF or 1
        self.seen_sessions.add(session)
        self._reset_session(params, session)
        self.params_history.append(params)
        self.reinit_wanted = False
        st.phase = Phase.REINIT_PENDING
        message = signed_params_message(MsgType.REINIT, session, params, st.own_rsa, st.peer_pub)
        self._arm_setup(message)
        return message

    def reinit(self, now: int | None = None) -> WireMessage:
        """Issue fresh signed (g, p) to the bound device under a new session id."""
        if now is not None:
            self.now = now
        before = self.state.phase
        try:
            message = self._reinit_message()
        except ProtocolError as exc:
            self._event(before, MsgType.REINIT, 0, "rejected:reinit_refused", str(exc))
            raise
        self._event(before, MsgType.REINIT, 0, "reinit_sent")
        return message

    def _request_reinit(self) -> list[WireMessage]:
        self.reinit_wanted = False
        try:
            return [self.reinit()]
        except ProtocolError:
            return []

    def _timers(self) -> list[WireMessage]:
        out = super()._timers()
        st = self.state
        if self._last_setup is None or st.phase not in (Phase.SETUP_PENDING, Phase.REINIT_PENDING):
            return out
        if self.now < self._setup_deadline:
            return out
        before = st.phase
        if self._setup_retries < self.timing.max_retries:
            self._setup_retries += 1
            self._setup_deadline = self.now + self.timing.setup_timeout
            self._event(before, self._last_setup.msg_type, 0, "setup_retransmitted")
            return out + [self._last_setup]
        self._last_setup = None
        st.phase = Phase.FAILED
        self._event(before, None, None, "setup_unconfirmed")
        return out


class Device(Endpoint):
    """The smart device: provisioned by the user, checks the gateway's signature on (g, p)."""

    role = Role.SD

    def __init__(self, rng: RandomSource, *, timing: Timing | None = None, log: EventLog | None = None):
        super().__init__(rng, timing, log)
        self.record: ProvisioningRecord | None = None
        self.reinit_requests = 0
        self.params_history: list[DhParams] = []
        self._stash: tuple[WireMessage, bytes, bytes] | None = None
        self._wait_deadline = 0
        self._wait_retries = 0
        self._waiting: WireMessage | None = None
        self._handlers.update({
            MsgType.SETUP_HG2SD: self._on_signed_params,
            MsgType.REINIT: self._on_signed_params,
            MsgType.PUBKEY_REPLY: self._on_pubkey_reply,
        })

    @property
    def busy(self) -> bool:
        return self._waiting is not None or super().busy

    def provision(self, record: ProvisioningRecord, now: int = 0) -> None:
        """Direct write by the user.  Each record is written once."""
        if record is self.record:
            raise ProtocolError("provisioning record already written")
        self.now = now
        before = self.state.phase
        self.record = record
        self.state.own_rsa = record.sd_priv
        self.state.peer_pub = record.hg_pub_preinstalled
        self._reset_session(None, 0)
        self.outbox.clear()
        self.reinit_requests = 0
        self.reinit_wanted = False
        self._stash = self._waiting = None
        self.state.phase = Phase.PROVISIONED
        self._event(before, None, None, "provisioned")

    def _reject_setup(self, exc: Rejected) -> Rejected:
        # a forged or mangled (g, p) must not tear down a working session
        if self.state.phase != Phase.ESTABLISHED:
            self.state.phase = Phase.FAILED
            self.reinit_wanted = self.reinit_requests < self.timing.max_reinits
        self._stash = None
        self._waiting = None
        return exc

    def _on_signed_params(self, msg: WireMessage):
        st = self.state
        if st.phase == Phase.UNPROVISIONED:
            raise Rejected("unprovisioned")
        if msg.session_id <= st.session_id:
            raise Rejected("stale_session", f"session {msg.session_id} <= {st.session_id}")
        if len(msg.fields) != 1:
            raise self._reject_setup(Rejected("malformed", "signed parameters carry one field"))
        try:
            blob, sig = unpack_fields(rsa_decrypt(msg.fields[0], st.own_rsa))
        except (DecodeError, ValueError) as exc:
            raise self._reject_setup(Rejected("decrypt", str(exc))) from exc
        if st.peer_pub is None:
            # key-request mode: ask the channel for the gateway's public key
            self._stash = (msg, blob, sig)
            st.phase = Phase.SETUP_PENDING
            request = WireMessage(MsgType.PUBKEY_REQUEST, msg.session_id, 0)
            self._wait_for(request)
            return "pubkey_requested", [request]
        return self._check_signature(msg, blob, sig)

    def _check_signature(self, msg: WireMessage, blob: bytes, sig: bytes):
        st = self.state
        try:
            recovered = rsa_unapply(sig, st.peer_pub.e, st.peer_pub.n)
        except DecodeError as exc:
            raise self._reject_setup(AuthenticationError(f"signature check failed: {exc}")) from exc
        if recovered != blob:
            raise self._reject_setup(AuthenticationError("signed (g, p) differs from delivered (g, p)"))
        try:
            params = decode_params(blob)
        except (DecodeError, ParameterError) as exc:
            raise self._reject_setup(Rejected("invalid_params", str(exc))) from exc
        self._stash = None
        self._waiting = None
        self._reset_session(params, msg.session_id)
        self.params_history.append(params)
        self.reinit_requests = 0
        self.reinit_wanted = False
        st.phase = Phase.ESTABLISHED
        if self.timing.keepalive_on_establish and params.width >= FRAME_OVERHEAD:
            # the first offer under the new session is the gateway's confirmation
            self.outbox.appendleft(b"")
        return "established", []

    def _on_pubkey_reply(self, msg: WireMessage):
        if self._stash is None or msg.session_id != self._stash[0].session_id:
            raise Rejected("unexpected_pubkey", f"session {msg.session_id}")
        if len(msg.fields) != 1:
            raise self._reject_setup(Rejected("malformed", "PUBKEY_REPLY carries one field"))
        try:
            self.state.peer_pub = decode_public_key(msg.fields[0])
        except DecodeError as exc:
            raise self._reject_setup(Rejected("malformed", str(exc))) from exc
        return self._check_signature(*self._stash)

    def _wait_for(self, message: WireMessage) -> None:
        self._waiting = message
        self._wait_deadline = self.now + self.timing.setup_timeout
        self._wait_retries = 0

    def _request_reinit(self) -> list[WireMessage]:
        self.reinit_wanted = False
        st = self.state
        before = st.phase
        if self.reinit_requests >= self.timing.max_reinits:
            st.phase = Phase.FAILED
            self._event(before, MsgType.REINIT, None, "reinit_budget_exhausted")
            return []
        self.reinit_requests += 1
        if st.phase == Phase.ESTABLISHED:
            st.phase = Phase.REINIT_PENDING
        request = WireMessage(MsgType.REINIT, st.session_id, 0)
        self._wait_for(request)
        self._event(before, MsgType.REINIT, 0, "reinit_requested")
        return [request]

    def _timers(self) -> list[WireMessage]:
        out = super()._timers()
        if self._waiting is None or self.now < self._wait_deadline:
            return out
        before = self.state.phase
        if self._wait_retries < self.timing.max_retries:
            self._wait_retries += 1
            self._wait_deadline = self.now + self.timing.setup_timeout
            self._event(before, self._waiting.msg_type, self._waiting.seq, "request_retransmitted")
            return out + [self._waiting]
        was_reinit = self._waiting.msg_type == MsgType.REINIT
        self._waiting = None
        self._stash = None
        self.state.phase = Phase.FAILED
        self.reinit_wanted = was_reinit and self.reinit_requests < self.timing.max_reinits
        self._event(before, None, None, "request_unanswered")
        return out
