"""Golden wire vectors: one serialized message of every type from a fixed-seed run."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import ParameterError
from .roles import SetupConfig, Timing
from .simnet import Eavesdropper, Simulation, WorldConfig, peek_type
from .wire import MsgType, WireError, WireMessage, parse, serialize

GOLDEN_SEED = 7
FORMAT = "otfdh-wire-goldens"


def default_path() -> Path:
    return Path(str(resources.files("otfdh") / "data" / "golden_vectors.json"))


def generate_vectors(seed: int = GOLDEN_SEED) -> list[dict]:
    """Run a small session in key-request mode and keep the first message of each type."""
    cfg = WorldConfig(seed=seed, setup=SetupConfig(dh_bits=160, rsa_bits=256, preinstall_hg_pub=False),
                      timing=Timing())
    sim = Simulation(cfg, lambda s, rng: Eavesdropper(rng))
    sim.queue_packets([b"golden"])
    sim.run()
    sim.transmit("HG", [sim.hg.reinit(sim.tick)])
    sim.run()
    first: dict[MsgType, bytes] = {MsgType.SETUP_U2HG: serialize(sim.setup_msg)}
    for _, _, _, data in sim.adversary.captured:
        first.setdefault(peek_type(data), data)
    missing = set(MsgType) - set(first)
    if missing:
        raise RuntimeError(f"golden run produced no {sorted(m.name for m in missing)}")
    vectors = []
    for mtype in MsgType:
        msg = parse(first[mtype])
        vectors.append({
            "name": mtype.name,
            "msg_type": int(msg.msg_type),
            "session_id": msg.session_id,
            "seq": msg.seq,
            "fields": [f.hex() for f in msg.fields],
            "hex": first[mtype].hex(),
        })
    return vectors


def write_vectors(path, seed: int = GOLDEN_SEED) -> None:
    doc = {"format": FORMAT, "seed": seed, "vectors": generate_vectors(seed)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_vectors(path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ParameterError(f"{path} is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path} is not a golden-vector file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT or not doc.get("vectors"):
        raise ParameterError(f"{path} is not a golden-vector file")
    return doc["vectors"]


def check_vector(vec: dict) -> bool:
    """Rebuild the message from its fields and compare bytes both ways."""
    try:
        msg = WireMessage(vec["msg_type"], vec["session_id"], vec["seq"],
                          tuple(bytes.fromhex(f) for f in vec["fields"]))
        raw = bytes.fromhex(vec["hex"])
        return serialize(msg) == raw and parse(raw) == msg
    except (KeyError, TypeError, ValueError, WireError):
        return False


def verify_vectors(path) -> list[str]:
    """Names of the vectors that fail to round-trip; empty means all good."""
    return [vec.get("name", f"#{i}") for i, vec in enumerate(load_vectors(path)) if not check_vector(vec)]
