from collections import Counter

import pytest

from otfdh.numtheory import RandomSource
from otfdh.roles import Phase, SetupConfig, Timing
from otfdh.simnet import (Adversary, Channel, Eavesdropper, ManInTheMiddle, Replayer, Simulation, Tamperer,
                          WorldConfig, peek_type)
from otfdh.textbook_rsa import rsa_keygen
from otfdh.wire import MsgType

SMALL = SetupConfig(dh_bits=160, rsa_bits=512)


def simulate(adversary=None, packets=0, seed=3, setup=SMALL, **world):
    sim = Simulation(WorldConfig(seed=seed, setup=setup, **world), adversary)
    sim.queue_packets([f"p{i:03d}".encode() for i in range(packets)])
    return sim.run()


def outcomes(sim, role=None):
    return Counter(r["outcome"] for r in sim.log if role is None or r["role"] == role)


def test_channel_loss_and_conservation():
    ch = Channel(RandomSource(1), loss_rate=0.5, delay=(1, 4))
    for i in range(1000):
        ch.send(i, "SD", "HG", bytes([i % 256]))
    for t in range(1, 1010):
        ch.due(t)
    assert ch.conserved()
    assert ch.injected == 1000 == ch.delivered + ch.dropped
    assert 400 < ch.dropped < 600


def test_channel_delay_range():
    ch = Channel(RandomSource(2), delay=(1, 4))
    for _ in range(400):
        ch.send(0, "SD", "HG", b"x")
    times = Counter(d.deliver_time for d in ch.due(10))
    assert set(times) == {1, 2, 3, 4}


def test_channel_orders_by_time():
    ch = Channel(RandomSource(1), delay=(1, 1))
    ch.send(0, "SD", "HG", b"a")
    ch.send(0, "SD", "HG", b"b")
    ch.inject(0, "HG", "SD", b"c")
    assert [d.data for d in ch.due(0)] == [b"c"]
    assert [d.data for d in ch.due(1)] == [b"a", b"b"]
    assert len(ch) == 0


def test_channel_rejects_bad_config():
    with pytest.raises(ValueError):
        Channel(RandomSource(1), loss_rate=1.5)
    with pytest.raises(ValueError):
        Channel(RandomSource(1), delay=(3, 1))


def test_peek_type():
    assert peek_type(b"junk") is None


def test_honest_hundred_packets():
    sim = simulate(packets=100)
    assert sorted(sim.delivered_payloads()) == [f"p{i:03d}".encode() for i in range(100)]
    assert not any(o.startswith("rejected:") for o in outcomes(sim))
    assert not sim.violations


def test_loss_rate_one_after_establishment_escalates():
    sim = simulate()
    assert sim.sd.phase == Phase.ESTABLISHED
    sim.channel.loss_rate = 1.0
    sim.queue_packets([b"a", b"b"])
    sim.run()
    assert sim.delivered_payloads() == []
    sd = outcomes(sim, "SD")
    assert sd["offer_retransmitted"] == sim.sd.timing.max_retries
    assert sd["retries_exhausted"] == 1
    assert sd["reinit_requested"] == sim.sd.timing.max_reinits
    assert sim.sd.phase == Phase.FAILED


def test_loss_rate_one_from_start():
    sim = simulate(packets=3, loss_rate=1.0)
    assert sim.delivered_payloads() == []
    assert sim.sd.phase == Phase.PROVISIONED
    assert sim.channel.conserved()


def test_same_seed_same_log():
    a = simulate(lambda s, r: Tamperer(r), packets=5, seed=9, loss_rate=0.2, delay=(1, 3))
    b = simulate(lambda s, r: Tamperer(r), packets=5, seed=9, loss_rate=0.2, delay=(1, 3))
    assert a.log.to_jsonl() == b.log.to_jsonl()
    c = simulate(lambda s, r: Tamperer(r), packets=5, seed=10, loss_rate=0.2, delay=(1, 3))
    assert a.log.to_jsonl() != c.log.to_jsonl()


def test_eavesdropper_does_not_interfere():
    quiet = simulate(packets=8)
    spied = simulate(lambda s, r: Eavesdropper(r), packets=8)
    assert quiet.log.to_jsonl() == spied.log.to_jsonl()
    assert spied.adversary.captured and not quiet.adversary.captured


def test_zero_bit_tamper_is_identity():
    base = simulate(packets=6)
    idle = simulate(lambda s, r: Tamperer(r, bits=0), packets=6)
    none_selected = simulate(lambda s, r: Tamperer(r, indices=()), packets=6)
    assert base.log.to_jsonl() == idle.log.to_jsonl() == none_selected.log.to_jsonl()


def test_replay_every_data_message():
    world = WorldConfig(seed=4, setup=SMALL, timing=Timing(keepalive_on_establish=False))
    sim = Simulation(world, lambda s, r: Replayer(r, types=(MsgType.DATA,)))
    sim.queue_packets([bytes([i]) for i in range(50)])
    sim.run()
    replays = [o for o in sim.outcomes if o[2] == "replay"]
    assert len(replays) == 50
    assert all(o[4].startswith("rejected:") for o in replays)
    assert Counter(sim.delivered_payloads()) == Counter(bytes([i]) for i in range(50))


def test_replayed_setup_after_establishment():
    sim = simulate(lambda s, r: Replayer(r, types=(MsgType.SETUP_HG2SD,)), packets=2)
    assert outcomes(sim, "SD")["rejected:stale_session"] == 1
    assert sim.sd.phase == Phase.ESTABLISHED


def test_replay_into_empty_session():
    sim = simulate(lambda s, r: Replayer(r, types=(MsgType.DATA,)))
    rejected = {o for o in outcomes(sim) if o.startswith("rejected:")}
    assert rejected == {"rejected:orphan_data"}


def test_tampered_setup_fails_check_then_recovers():
    sim = simulate(lambda s, r: Tamperer(r, types=(MsgType.SETUP_HG2SD,)), packets=2)
    sd = outcomes(sim, "SD")
    assert sd["rejected:decrypt"] + sd["rejected:auth"] == 1
    assert sd["reinit_requested"] == 1
    assert sim.sd.phase == Phase.ESTABLISHED
    assert len(sim.delivered_payloads()) == 2


def test_tampered_data_all_rejected():
    sim = simulate(lambda s, r: Tamperer(r), packets=20)
    assert outcomes(sim, "HG")["rejected:crc"] == len(sim.adversary.tampered) == 21
    assert sim.delivered_payloads() == []


def mitm(mode, preinstall):
    setup = SetupConfig(dh_bits=160, rsa_bits=512, preinstall_hg_pub=preinstall)

    def factory(sim, rng):
        return ManInTheMiddle(rng, rsa_keygen(512, rng.fork("mitm")), sim.record.sd_priv.public, 160,
                              sim.cfg.timing, mode)
    return simulate(factory, packets=4, setup=setup)


def test_mitm_succeeds_without_preinstalled_key():
    sim = mitm("substitute", preinstall=False)
    assert sim.sd.phase == Phase.ESTABLISHED
    assert sim.sd.state.params in sim.adversary.forged.values()
    assert len(sim.adversary.recovered_payloads) == 4


def test_mitm_fails_with_preinstalled_key():
    sim = mitm("substitute", preinstall=True)
    assert outcomes(sim, "SD")["rejected:auth"] >= 1
    assert sim.sd.state.params not in sim.adversary.forged.values()
    assert sim.adversary.recovered_payloads == []


def test_forged_reinit_rejected():
    sim = mitm("forge_reinit", preinstall=True)
    assert sim.adversary.forged_reinit_sent
    assert outcomes(sim, "SD")["rejected:auth"] == 1
    assert sim.sd.phase == Phase.ESTABLISHED
    assert len(sim.delivered_payloads()) == 4


def test_base_adversary_passes_everything():
    adv = Adversary(RandomSource(0))
    assert adv.intercept(None, "SD", "HG", b"x") == [b"x"]
    assert adv.captured == []
