"""Named scenarios with expected verdicts, config files, and run summaries."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, fields

from .errors import ParameterError
from .numtheory import RandomSource
from .roles import Phase, SetupConfig, Timing
from .simnet import (
    Adversary,
    AdversaryKind,
    Eavesdropper,
    ManInTheMiddle,
    Replayer,
    Simulation,
    Tamperer,
    WorldConfig,
)
from .textbook_rsa import rsa_keygen
from .wire import FRAME_OVERHEAD, MsgType

MIN_DATA_DH_BITS = 136

PRESETS: dict[str, dict] = {
    "honest": {},
    "eavesdrop": {"adversary": "eavesdrop"},
    "replay": {"adversary": "replay", "packets": 50},
    "tamper": {"adversary": "tamper", "packets": 50},
    "mitm-literal": {"adversary": "mitm", "preinstall_hg_pub": False, "packets": 10},
    "mitm-preinstalled": {"adversary": "mitm", "preinstall_hg_pub": True, "packets": 10},
    "mitm-forge-reinit": {"adversary": "mitm", "mitm_mode": "forge_reinit", "packets": 10},
    "lossy": {"loss_rate": 0.1, "delay_min": 1, "delay_max": 3},
    # DATA #0 is the device's keep-alive, so index 6 is the sixth application packet
    "reinit": {"adversary": "tamper", "tamper_indices": "6", "crc_reinit_threshold": 1, "packets": 56},
}

EXPECTED: dict[str, str] = {
    "honest": "ok",
    "eavesdrop": "ok",
    "replay": "defended",
    "tamper": "defended",
    "mitm-literal": "compromised",
    "mitm-preinstalled": "defended",
    "mitm-forge-reinit": "defended",
    "lossy": "consistent",
    "reinit": "recovered",
}


@dataclass
class ScenarioConfig:
    scenario: str = "honest"
    seed: int = 0
    dh_bits: int = 256
    rsa_bits: int = 512
    packets: int = 100
    adversary: str = "none"
    loss_rate: float = 0.0
    delay_min: int = 1
    delay_max: int = 1
    sign_u2hg: bool = False
    preinstall_hg_pub: bool = True
    prefer_prime_g: bool = True
    payload: str = "counter"
    replay_delay: int = 10
    replay_types: str = "DH_OFFER,DATA"
    tamper_types: str = "DATA"
    tamper_indices: str = ""
    tamper_bits: int = 1
    mitm_mode: str = "substitute"
    crc_reinit_threshold: int = 0
    max_ticks: int = 1_000_000
    trace: str | None = None

    @classmethod
    def resolve(cls, scenario: str = "honest", **overrides) -> ScenarioConfig:
        """Defaults, then the named preset, then every override that is not None."""
        if scenario not in PRESETS:
            raise ParameterError(f"unknown scenario {scenario!r}; choose from {', '.join(PRESETS)}")
        names = {f.name for f in fields(cls)}
        unknown = set(overrides) - names
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values = {**PRESETS[scenario], **{k: v for k, v in overrides.items() if v is not None}}
        cfg = cls(scenario=scenario, **values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.dh_bits < 8:
            raise ParameterError("dh_bits must be >= 8")
        if self.rsa_bits < 64 or self.rsa_bits % 2:
            raise ParameterError("rsa_bits must be even and >= 64")
        if self.packets < 0:
            raise ParameterError("packets must be >= 0")
        if self.packets > 0 and self.payload != "fixed:" and self.dh_bits < MIN_DATA_DH_BITS:
            raise ParameterError(
                f"dh_bits = {self.dh_bits} leaves no room for payload: a {FRAME_OVERHEAD}-byte frame "
                f"plus one payload byte needs dh_bits >= {MIN_DATA_DH_BITS}")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ParameterError("loss_rate must lie in [0, 1]")
        if not 0 <= self.delay_min <= self.delay_max:
            raise ParameterError("need 0 <= delay_min <= delay_max")
        if not 0 <= self.seed < 1 << 64:
            raise ParameterError("seed must fit in 64 bits")
        try:
            AdversaryKind(self.adversary)
        except ValueError:
            raise ParameterError(f"unknown adversary {self.adversary!r}") from None
        if self.payload not in ("counter", "random") and not self.payload.startswith("fixed:"):
            raise ParameterError(f"payload must be counter, random or fixed:<text>, got {self.payload!r}")
        try:
            self._types(self.replay_types)
            self._types(self.tamper_types)
            self._indices()
        except (KeyError, ValueError) as exc:
            raise ParameterError(f"bad message type or index list: {exc}") from None

    @staticmethod
    def _types(text: str) -> tuple[MsgType, ...]:
        return tuple(MsgType[t.strip()] for t in text.split(",") if t.strip())

    def _indices(self):
        if not self.tamper_indices.strip():
            return None
        return [int(i) for i in self.tamper_indices.split(",") if i.strip()]

    @property
    def expected(self) -> str | None:
        return EXPECTED.get(self.scenario)

    def world(self) -> WorldConfig:
        return WorldConfig(
            seed=self.seed,
            setup=SetupConfig(self.dh_bits, self.rsa_bits, self.sign_u2hg, self.preinstall_hg_pub, self.prefer_prime_g),
            timing=Timing(crc_reinit_threshold=self.crc_reinit_threshold or None),
            loss_rate=self.loss_rate,
            delay=(self.delay_min, self.delay_max),
            max_ticks=self.max_ticks,
        )

    def payloads(self) -> list[bytes]:
        limit = (self.dh_bits + 7) // 8 - FRAME_OVERHEAD
        if self.payload == "counter":
            return [f"pkt{i:05d}".encode() for i in range(self.packets)]
        if self.payload == "random":
            rng = RandomSource(self.seed).fork("payload")
            return [rng.randbytes(limit) for _ in range(self.packets)]
        text = self.payload[len("fixed:"):].encode()
        return [text] * self.packets


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Keys may use dashes."""
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ParameterError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            if kind == "bool":
                out[key] = _bool(value)
            elif kind == "int":
                out[key] = int(value, 0)
            elif kind == "float":
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise ParameterError(f"line {lineno}: {exc}") from None
    return out


def load_config(path, **overrides) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig.resolve(**values)


def build_simulation(cfg: ScenarioConfig) -> Simulation:
    kind = AdversaryKind(cfg.adversary)

    def make_adversary(sim: Simulation, rng: RandomSource) -> Adversary:
        if kind == AdversaryKind.EAVESDROP:
            return Eavesdropper(rng)
        if kind == AdversaryKind.REPLAY:
            return Replayer(rng, cfg._types(cfg.replay_types), cfg.replay_delay)
        if kind == AdversaryKind.TAMPER:
            return Tamperer(rng, cfg._types(cfg.tamper_types), cfg._indices(), cfg.tamper_bits)
        if kind == AdversaryKind.MITM:
            # the device's key is public; the adversary is assumed to know it
            return ManInTheMiddle(rng, rsa_keygen(cfg.rsa_bits, rng.fork("mitm-rsa")),
                                  sim.record.sd_priv.public, cfg.dh_bits, sim.cfg.timing, cfg.mitm_mode)
        return Adversary(rng)

    sim = Simulation(cfg.world(), make_adversary)
    sim.queue_packets(cfg.payloads())
    return sim


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    sim: Simulation
    summary: dict = field(default_factory=dict)
    verdict: str = ""

    @property
    def expected(self) -> str | None:
        return self.config.expected

    @property
    def passed(self) -> bool:
        return self.expected is None or self.verdict == self.expected


def summarize(sim: Simulation) -> dict:
    delivered = sim.delivered_payloads()
    counts = Counter(delivered)
    sent = set(sim.app_sent) | set(sim.app_queue)
    rejections = Counter(r["outcome"].split(":", 1)[1] for r in sim.log
                         if r["outcome"] and r["outcome"].startswith("rejected:"))
    replays = [o for o in sim.outcomes if o[2] == "replay"]
    adv = sim.adversary
    first_session = sim.hg.params_history and sim.sd.params_history
    sessions_sd = {s for s, _, p in sim.sd.sent if p}
    base_session = min(sessions_sd) if sessions_sd else None
    fingerprints = [fp for fps in sim.sd.key_fingerprints.values() for fp in fps]
    return {
        "ticks": sim.tick,
        "packets_queued": len(sim.app_sent) + len(sim.app_queue),
        "data_sent": sum(1 for _, _, p in sim.sd.sent if p),
        "delivered": len(delivered),
        "duplicates": sum(c - 1 for c in counts.values() if c > 1),
        "corrupted": sum(c for p, c in counts.items() if p not in sent),
        "rejections": dict(sorted(rejections.items())),
        "replays_delivered": len(replays),
        "replays_rejected": sum(1 for o in replays if o[4].startswith("rejected:")),
        "tampered": len(getattr(adv, "tampered", ())),
        "reinits": max(len(sim.hg.params_history) - 1, 0),
        "post_reinit_sent": sum(1 for s, _, p in sim.sd.sent if p and s != base_session),
        "post_reinit_delivered": sum(1 for s, _, p in sim.hg.delivered if p and s != base_session),
        "sd_phase": sim.sd.phase.value,
        "hg_phase": sim.hg.phase.value,
        "params_changed": bool(first_session) and sim.hg.params_history[-1] != sim.hg.params_history[0],
        "adversary_recovered": len(getattr(adv, "recovered_payloads", ())),
        "adversary_params_accepted": any(p in getattr(adv, "forged", {}).values() for p in sim.sd.params_history),
        "keys_unique": len(fingerprints) == len(set(fingerprints)),
        "violations": list(sim.violations),
    }


def judge(cfg: ScenarioConfig, s: dict) -> str:
    clean = s["duplicates"] == 0 and s["corrupted"] == 0 and not s["violations"]
    kind = AdversaryKind(cfg.adversary)
    name = cfg.scenario
    if kind == AdversaryKind.MITM:
        return "compromised" if s["adversary_params_accepted"] or s["adversary_recovered"] else "defended"
    if name == "reinit":
        ok = (s["reinits"] >= 1 and s["params_changed"] and clean and s["sd_phase"] == Phase.ESTABLISHED.value
              and s["post_reinit_sent"] > 0 and s["post_reinit_delivered"] == s["post_reinit_sent"])
        return "recovered" if ok else "not_recovered"
    if kind == AdversaryKind.REPLAY:
        ok = (clean and s["replays_delivered"] > 0 and s["replays_rejected"] == s["replays_delivered"]
              and s["delivered"] == s["packets_queued"])
        return "defended" if ok else "vulnerable"
    if kind == AdversaryKind.TAMPER:
        ok = clean and s["rejections"].get("crc", 0) == s["tampered"]
        return "defended" if ok else "vulnerable"
    if cfg.loss_rate > 0:
        return "consistent" if clean else "inconsistent"
    ok = clean and s["delivered"] == s["packets_queued"] and not s["rejections"]
    return "ok" if ok else "failed"


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    sim = build_simulation(cfg).run()
    summary = summarize(sim)
    result = ScenarioResult(cfg, sim, summary, judge(cfg, summary))
    summary.update(scenario=cfg.scenario, seed=cfg.seed, verdict=result.verdict, expected=cfg.expected)
    if cfg.trace:
        sim.log.write(cfg.trace)
    return result
