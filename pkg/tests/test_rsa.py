import pytest
from hypothesis import given, settings, strategies as st

from otfdh.errors import DecodeError, ParameterError
from otfdh.numtheory import DhParams, RandomSource
from otfdh.textbook_rsa import (
    SignedPayload, keypair_from_factors, rsa_apply, rsa_decrypt, rsa_encrypt, rsa_keygen, rsa_sign,
    rsa_unapply, rsa_verify,
)
from otfdh.wire import encode_params, encode_public_key


def ext_euclid_inverse(a, m):
    old_r, r, old_s, s = a, m, 1, 0
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
    assert old_r == 1
    return old_s % m


@pytest.fixture(scope="module")
def kp512():
    return rsa_keygen(512, RandomSource(11))


@pytest.fixture(scope="module")
def kp64():
    return rsa_keygen(64, RandomSource(12))


def test_forced_factors():
    kp = keypair_from_factors(61, 53, 17)
    assert kp.n == 3233
    assert kp.d == 2753 == ext_euclid_inverse(17, 60 * 52)


def test_keypair_rejects_bad_exponent():
    with pytest.raises(ParameterError):
        keypair_from_factors(61, 53, 4)
    with pytest.raises(ParameterError):
        keypair_from_factors(61, 61, 17)


def test_single_block_textbook_value():
    out = rsa_apply(bytes([65]), 17, 3233)
    assert int.from_bytes(out[:2], "big") == 2790 == pow(65, 17, 3233)
    assert rsa_unapply(out, 2753, 3233) == b"A"


def test_keygen_properties(kp512):
    assert kp512.n.bit_length() == 512
    rng = RandomSource(5)
    for _ in range(100):
        m = rng.uniform_below(kp512.n)
        assert pow(pow(m, kp512.public.e, kp512.n), kp512.d, kp512.n) == m
    assert kp512.self_test(RandomSource(1))


def test_keygen_distinct_seeds():
    assert rsa_keygen(128, RandomSource(1)).n != rsa_keygen(128, RandomSource(2)).n


@pytest.mark.parametrize("bits", [63, 62, 32])
def test_keygen_bad_sizes(bits):
    with pytest.raises(ParameterError):
        rsa_keygen(bits, RandomSource(0))


@settings(deadline=None, max_examples=50)
@given(st.binary(max_size=3 * 63))
def test_apply_unapply_inverse(kp512, data):
    assert rsa_unapply(rsa_apply(data, kp512.public.e, kp512.n), kp512.d, kp512.n) == data
    assert rsa_decrypt(rsa_encrypt(data, kp512.public), kp512) == data


def test_empty_payload():
    kp = keypair_from_factors(61, 53, 17)
    assert rsa_apply(b"", 17, 3233) == b""
    assert rsa_unapply(b"", 2753, kp.n) == b""


def test_setup_body_round_trip(kp512, kp64):
    body = encode_params(DhParams(5, 23)) + encode_public_key(kp64.public)
    assert rsa_decrypt(rsa_encrypt(body, kp512.public), kp512) == body


def test_every_single_byte_flip_is_detected(kp64):
    m = b"flip test!!"
    c = rsa_encrypt(m, kp64.public)
    for i in range(len(c)):
        for delta in range(1, 256):
            mutated = bytearray(c)
            mutated[i] ^= delta
            try:
                assert rsa_decrypt(bytes(mutated), kp64) != m
            except DecodeError:
                pass


@pytest.mark.parametrize("blob", [b"\x00", b"\x01\x02", bytes(66), bytes(64) + b"\x3f"])
def test_unapply_rejects_misshapen_input(kp512, blob):
    with pytest.raises(DecodeError):
        rsa_unapply(blob, kp512.d, kp512.n)


def test_unapply_rejects_block_above_modulus(kp512):
    blob = (kp512.n + 1).to_bytes(64, "big") + b"\x00"
    with pytest.raises(DecodeError):
        rsa_decrypt(blob, kp512)


def test_modulus_too_small():
    with pytest.raises(ParameterError):
        rsa_apply(b"x", 3, 253)


def test_sign_verify(kp512):
    rng = RandomSource(3)
    for _ in range(100):
        m = rng.randbytes(rng.uniform_range(1, 2 * 63))
        assert rsa_verify(m, rsa_sign(m, kp512), kp512.public)
    assert not rsa_verify(b"one", rsa_sign(b"two", kp512), kp512.public)


def test_verify_under_wrong_key():
    rng = RandomSource(8)
    m = b"gateway parameters"
    signer = rsa_keygen(128, rng)
    sig = rsa_sign(m, signer)
    for _ in range(100):
        assert not rsa_verify(m, sig, rsa_keygen(128, rng).public)


def test_signed_payload(kp512):
    sp = SignedPayload.create(b"payload", kp512)
    assert sp.verify(kp512.public)
    assert not SignedPayload(b"payloaD", sp.signature).verify(kp512.public)
