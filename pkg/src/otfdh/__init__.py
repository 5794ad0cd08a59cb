"""Per-packet one-time-pad transport keyed by fresh Diffie-Hellman exchanges, with a deterministic simulator."""

from .dh import DhEphemeral, SharedKey, dh_combine, dh_offer, xor_otp
from .errors import (AuthenticationError, DecodeError, GenerationError, OtfdhError, ParameterError,
                     ProtocolError, Rejected, SizeError, UnsupportedParameterError)
from .numtheory import (DhParams, RandomSource, find_primitive_root, generate_prime, generate_safe_prime,
                        is_prime, is_primitive_root, is_safe_prime, modexp)
from .roles import Device, EventLog, Gateway, Phase, Role, SetupConfig, Timing, user_setup
from .scenarios import PRESETS, ScenarioConfig, run_scenario
from .simnet import AdversaryKind, Simulation, WorldConfig
from .textbook_rsa import (RsaKeyPair, RsaPublicKey, keypair_from_factors, rsa_decrypt, rsa_encrypt,
                           rsa_keygen, rsa_sign, rsa_verify)
from .wire import Frame, MsgType, WireMessage, frame_pack, frame_unpack, parse, serialize

__version__ = "0.1.0"
