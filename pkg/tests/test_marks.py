import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clonemarks.identity import Authority, Signature, sign
from clonemarks.marks import (Device, Mark, MarkReply, PersonalMarks, ProtocolViolation,
                              mark_check, mark_update, on_meeting)

from conftest import N


@pytest.fixture
def world():
    ca = Authority(seed=3)
    ents = [N("i"), N("j"), N("m")]
    ca.enroll_all(ents)
    devs = {e.id: Device(e, ca.private_key(e)) for e in ents}
    return ca, devs, random.Random(0)


# -- mark update -------------------------------------------------------------------

def test_first_update_stores_mark_at_both(world):
    ca, d, rng = world
    mark = mark_update(d["i"], d["j"], 100, rng, ca)
    assert mark.t == 100 and mark.is_valid(ca)
    assert d["i"].store.get(N("j")) == mark == d["j"].store.get(N("i"))
    assert mark.parties == (N("i"), N("j"))


def test_lower_id_initiates_regardless_of_argument_order(world):
    ca, d, rng = world
    mark = mark_update(d["j"], d["i"], 100, rng, ca)
    assert mark.parties == (N("i"), N("j"))


@pytest.mark.parametrize("step", [1, 2, 3])
def test_interrupted_update_keeps_old_mark(world, step):
    ca, d, rng = world
    old = mark_update(d["i"], d["j"], 100, rng, ca)
    assert mark_update(d["i"], d["j"], 200, rng, ca, interrupt_after=step) is None
    assert d["i"].store.get(N("j")) == old == d["j"].store.get(N("i"))


def test_sequential_updates_keep_latest(world):
    ca, d, rng = world
    mark_update(d["i"], d["j"], 100, rng, ca)
    mark_update(d["i"], d["j"], 250, rng, ca)
    assert d["i"].store.get(N("j")).t == 250 == d["j"].store.get(N("i")).t


def test_update_with_bad_key_aborts(world):
    ca, d, rng = world
    old = mark_update(d["i"], d["j"], 100, rng, ca)
    impostor = Device(N("j"), d["m"].key, d["j"].store)
    assert mark_update(d["i"], impostor, 200, rng, ca) is None
    assert d["i"].store.get(N("j")) == old


def test_mark_bytes_round_trip(world):
    ca, d, rng = world
    mark = mark_update(d["i"], d["j"], 42, rng, ca)
    assert Mark.from_bytes(mark.to_bytes()) == mark
    with pytest.raises(ValueError):
        Mark.from_bytes(b"\x00\x00\x00\x01X")


# -- mark check --------------------------------------------------------------------

def test_check_ok_when_marks_agree(world):
    ca, d, rng = world
    mark_update(d["i"], d["j"], 100, rng, ca)
    res = mark_check(N("i"), N("j"), d["j"].reply_to(N("i")), d["i"].reply_to(N("j")), ca)
    assert res.ok and res.evidence is None


def test_older_presented_mark_fails_with_evidence(world):
    ca, d, rng = world
    mark_update(d["i"], d["j"], 100, rng, ca)
    stale = d["j"].clone()
    mark_update(d["i"], d["j"], 200, rng, ca)
    res = mark_check(N("i"), N("j"), stale.reply_to(N("i")), d["i"].reply_to(N("j")), ca)
    assert not res.ok
    ev = res.evidence
    assert ev.accused == N("j") and ev.detector == N("i") and ev.kind == "mark-conflict"
    assert ev.presented.mark.t < ev.expected.mark.t
    assert ev.conflict_reason(ca) is None


def test_checker_holding_older_mark_accuses_itself(world):
    ca, d, rng = world
    mark_update(d["i"], d["j"], 100, rng, ca)
    stale_i = d["i"].clone()
    mark_update(d["i"], d["j"], 200, rng, ca)
    res = mark_check(N("i"), N("j"), d["j"].reply_to(N("i")), stale_i.reply_to(N("j")), ca)
    assert not res.ok and res.evidence.accused == N("i")


def test_forged_nonce_is_protocol_violation(world):
    ca, d, rng = world
    mark = mark_update(d["i"], d["j"], 100, rng, ca)
    payload = Mark.payload_for(mark.t, mark.r_i ^ 1, mark.r_j)
    forged_sig = sign(payload, d["m"].key)
    # keep the claimed signer, swap in a signature made with somebody else's key
    forged = replace(mark, r_i=mark.r_i ^ 1,
                     sig_i=Signature(N("i"), forged_sig.digest, forged_sig.value),
                     sig_j=Signature(N("j"), forged_sig.digest, forged_sig.value))
    reply_payload = MarkReply.payload_for(N("j"), N("i"), forged)
    reply = MarkReply(N("j"), N("i"), forged, sign(reply_payload, d["j"].key))
    with pytest.raises(ProtocolViolation):
        mark_check(N("i"), N("j"), reply, d["i"].reply_to(N("j")), ca)


def test_misaddressed_reply_is_protocol_violation(world):
    ca, d, rng = world
    mark_update(d["i"], d["j"], 100, rng, ca)
    with pytest.raises(ProtocolViolation):
        mark_check(N("i"), N("j"), d["j"].reply_to(N("m")), d["i"].reply_to(N("j")), ca)


# -- meetings ---------------------------------------------------------------------

def test_first_meeting_updates_without_check(world):
    ca, d, rng = world
    out = on_meeting(d["i"], d["j"], 10, rng, ca)
    assert out.first_meeting and out.checks == [] and out.mark.t == 10


def test_second_honest_meeting_checks_then_updates(world):
    ca, d, rng = world
    on_meeting(d["i"], d["j"], 10, rng, ca)
    out = on_meeting(d["j"], d["i"], 20, rng, ca)
    assert [c.ok for c in out.checks] == [True, True]
    assert out.mark.t == 20 and not out.failed and ca.revocations == ()


def test_clone_with_pre_attack_mark_is_revoked(world):
    ca, d, rng = world
    on_meeting(d["i"], d["j"], 10, rng, ca)        # before the attack
    clone = d["j"].clone()                          # t0
    on_meeting(d["i"], d["j"], 20, rng, ca)        # real j refreshes its mark with i
    out = on_meeting(d["i"], clone, 30, rng, ca)   # clone shows the t=10 mark
    assert out.failed and out.revoked == [N("j")]
    assert len(out.evidence) == 2 and {e.accused for e in out.evidence} == {N("j")}
    assert ca.is_revoked(N("j")) and not ca.is_revoked(N("i"))
    assert out.mark is None                        # no update after a failed check
    # revoked identities no longer take part
    assert on_meeting(d["i"], d["j"], 40, rng, ca).skipped


def test_clone_meeting_peer_first_denies_mark(world):
    ca, d, rng = world
    on_meeting(d["i"], d["m"], 10, rng, ca)
    clone = d["m"].clone()
    clone.store = type(clone.store)(N("m"))        # a clone with an empty store
    out = on_meeting(d["i"], clone, 20, rng, ca)
    assert out.failed and out.evidence[0].kind == "mark-denial"
    assert ca.is_revoked(N("m"))


def test_refusal_yields_no_mark(world):
    ca, d, rng = world
    on_meeting(d["i"], d["j"], 10, rng, ca)
    out = on_meeting(d["i"], d["j"], 20, rng, ca, refuse=True)
    assert out.refused and out.mark is None
    assert d["i"].store.get(N("j")).t == 10


def test_engine_ignores_non_peers():
    ca = Authority(seed=1)
    ents = [N("a"), N("b"), N("c")]
    ca.enroll_all(ents)
    engine = PersonalMarks(ca, {N("a"): {N("b")}, N("b"): {N("a")}})
    outs = engine.run([(N("a"), N("b"), 1), (N("a"), N("c"), 2), (N("b"), N("a"), 3)])
    assert [o.time for o in outs] == [1, 3]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=60), st.integers(0, 99))
def test_honest_schedules_never_fail(pairs, seed):
    ca = Authority(seed=seed)
    ents = [N(f"p{i}") for i in range(5)]
    ca.enroll_all(ents)
    peers = {e: set(ents) - {e} for e in ents}
    engine = PersonalMarks(ca, peers, seed)
    outs = engine.run((ents[a], ents[b], t) for t, (a, b) in enumerate(pairs))
    assert not any(o.failed for o in outs) and ca.revocations == ()
    assert all(not o.skipped and (o.first_meeting or len(o.checks) == 2) for o in outs)
    for u in ents:                                  # store symmetry after any honest prefix
        for v in ents:
            if u != v:
                assert engine.device(u).store.get(v) == engine.device(v).store.get(u)
