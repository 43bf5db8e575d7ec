import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clonemarks.certs import (AuthResult, CertificateVerificationError, CommunityCertificate,
                              EmptyFriendSetError, SignedUpdate, Timeline, authenticate,
                              closed_form_expiry, compute_fi, compute_fs, fresh_count,
                              invalid_intervals, is_fresh, is_valid, issue_certificate,
                              refresh_on_meeting, select_k, timeline_from_points)
from clonemarks.identity import Authority, Signature
from clonemarks.trace import DAY, split

from conftest import N, day, trace_of


def make_cert(ca, owner, fi, k, updates=None):
    """Certificate with CA signature and friend-signed updates {friend: t}."""
    fs = tuple(sorted(fi))
    ca.enroll_all([owner, *fs])
    sig = ca.sign(CommunityCertificate.payload_for(owner, fs, fi, k), ca.entity)
    su = {j: SignedUpdate.create(owner, t, ca.private_key(j)) for j, t in (updates or {}).items()}
    return CommunityCertificate(owner, fs, dict(fi), k, sig, su)


@pytest.fixture
def ca():
    return Authority(seed=5)


# -- FS ---------------------------------------------------------------------------

def test_fs_above_mean():
    assert compute_fs({"a": 5, "b": 1, "c": 3}) == {"a", "c"}


def test_fs_single_candidate():
    assert compute_fs({"a": 2}) == {"a"}


def test_fs_equal_counts_keep_everyone():
    assert compute_fs({"a": 4, "b": 4, "c": 4}) == {"a", "b", "c"}


def test_fs_exact_mean_no_float_slip():
    # mean 10/3 is not representable; d=3 must be excluded, d=4 included
    assert compute_fs({"a": 3, "b": 3, "c": 4}) == {"c"}


def test_fs_empty_refused():
    with pytest.raises(EmptyFriendSetError):
        compute_fs({})


def test_fs_from_trace():
    evs = [("i", "a", day(d, 10), day(d, 20)) for d in range(5)]
    evs += [("i", "b", day(0, 10), day(0, 20))]
    evs += [("i", "c", day(d, 30), day(d, 40)) for d in (0, 1, 2)]
    tr = trace_of(evs, span=(0, 6 * DAY))
    assert compute_fs(tr, N("i")) == {N("a"), N("c")}


# -- FI ---------------------------------------------------------------------------

def test_fi_mean_gap():
    assert compute_fi({"a": [1, 3, 7]}, fs={"a"}) == {"a": 3.0}


def test_fi_single_day_gets_training_span():
    assert compute_fi({"a": [4]}, fs={"a"}, training_days=14.0) == {"a": 14.0}
    with pytest.raises(ValueError):
        compute_fi({"a": [4]}, fs={"a"})


def test_fi_daily_is_one():
    assert compute_fi({"a": list(range(10))}, fs={"a"}) == {"a": 1.0}


def test_fi_from_trace_uses_training_length():
    evs = [("i", "a", day(d, 5), day(d, 9)) for d in (1, 3, 7)] + [("i", "b", day(4), day(4, 9))]
    tr = trace_of(evs, span=(0, 10 * DAY))
    assert compute_fi(tr, N("i"), fs={N("a"), N("b")}) == {N("a"): 3.0, N("b"): 10.0}


# -- freshness and validity ------------------------------------------------------

def test_fresh_inside_window():
    assert is_fresh(day(10), day(3), day(12))


def test_stale_at_window_end():
    assert not is_fresh(day(10), day(3), day(13))


def test_zero_window_never_fresh():
    assert not any(is_fresh(day(10), 0, t) for t in (day(9), day(10), day(11)))


def _pattern_cert(ca, pattern, k):
    """Friends f0.. with window 3 days; fresh ones updated at day 10, stale at day 1."""
    fi = {N(f"f{x}"): 3.0 for x in range(len(pattern))}
    upd = {N(f"f{x}"): day(10 if fresh else 1) for x, fresh in enumerate(pattern)}
    return make_cert(ca, N("o"), fi, k, upd)


def test_valid_with_enough_fresh(ca):
    assert is_valid(_pattern_cert(ca, (True, True, False), 2), day(11), ca)


def test_invalid_with_too_few_fresh(ca):
    assert not is_valid(_pattern_cert(ca, (True, False, False), 2), day(11), ca)


def test_bad_ca_signature_raises(ca):
    cert = _pattern_cert(ca, (True, True), 1)
    bad = CommunityCertificate(cert.owner, cert.fs, cert.fi, cert.k,
                               Signature(ca.entity, cert.ca_sig.digest, b"\x00" * 32), cert.su)
    with pytest.raises(CertificateVerificationError):
        is_valid(bad, day(11), ca)
    assert is_valid(bad, day(11))              # no pki: freshness only


def test_tampered_k_breaks_ca_signature(ca):
    cert = _pattern_cert(ca, (True, True, True), 3)
    lowered = CommunityCertificate(cert.owner, cert.fs, cert.fi, 1, cert.ca_sig, cert.su)
    assert not lowered.verify_ca(ca)


def test_update_signed_by_wrong_party_does_not_count(ca):
    cert = _pattern_cert(ca, (True, True), 2)
    fake = SignedUpdate.create(cert.owner, day(10), ca.private_key(N("f0")))
    su = dict(cert.su)
    su[N("f1")] = fake                          # f0 signing in f1's slot
    cert2 = CommunityCertificate(cert.owner, cert.fs, cert.fi, 2, cert.ca_sig, su)
    assert fresh_count(cert2, day(11), ca) == 1


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 5.0), st.one_of(st.none(), st.integers(0, 20))),
                min_size=1, max_size=8),
       st.integers(1, 8), st.integers(0, 25 * DAY))
def test_validity_matches_brute_force_count(rows, k, now):
    ca = Authority(seed=1)
    fi = {N(f"f{x}"): w for x, (w, _) in enumerate(rows)}
    upd = {N(f"f{x}"): day(t) for x, (_, t) in enumerate(rows) if t is not None}
    k = min(k, len(fi))
    cert = make_cert(ca, N("o"), fi, k, upd)
    count = sum(1 for j, t in upd.items() if t <= now < t + round(fi[j] * DAY))
    assert fresh_count(cert, now, ca) == count
    assert is_valid(cert, now, ca) == (count >= k)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 * DAY), st.integers(0, 5 * DAY), st.integers(0, 20 * DAY),
       st.integers(0, 20 * DAY))
def test_freshness_monotone_after_timestamp(t, w, a, b):
    lo, hi = sorted((t + a, t + b))
    if is_fresh(t, w, hi):
        assert is_fresh(t, w, lo)


def test_validity_monotone_in_k(ca):
    rng = random.Random(4)
    for _ in range(50):
        fi = {N(f"f{x}"): float(rng.randint(1, 4)) for x in range(5)}
        upd = {j: day(rng.randint(0, 8)) for j in fi}
        now = rng.randrange(day(10))
        valid = [is_valid(make_cert(ca, N("o"), fi, k, upd), now, ca) for k in range(1, 6)]
        assert valid == sorted(valid, reverse=True)


# -- refresh ------------------------------------------------------------------------

def test_refresh_sets_timestamp(ca):
    cert = make_cert(ca, N("o"), {N("a"): 2.0}, 1)
    out = refresh_on_meeting(cert, N("a"), day(12), ca.private_key(N("a")))
    assert out.su[N("a")].t == day(12) and out.su[N("a")].verify(ca)


def test_refresh_by_stranger_is_noop(ca):
    cert = make_cert(ca, N("o"), {N("a"): 2.0}, 1)
    ca.enroll(N("z"))
    assert refresh_on_meeting(cert, N("z"), day(12), ca.private_key(N("z"))) is cert


def test_later_refresh_wins(ca):
    cert = make_cert(ca, N("o"), {N("a"): 2.0}, 1)
    key = ca.private_key(N("a"))
    cert = refresh_on_meeting(cert, N("a"), day(12), key)
    cert = refresh_on_meeting(cert, N("a"), day(14), key)
    assert cert.su[N("a")].t == day(14)


def test_refresh_needs_friends_key(ca):
    cert = make_cert(ca, N("o"), {N("a"): 2.0, N("b"): 2.0}, 1)
    with pytest.raises(ValueError):
        refresh_on_meeting(cert, N("a"), day(1), ca.private_key(N("b")))


# -- k selection and false positives -----------------------------------------------

def dense_counts(tl: Timeline, t_from, t_end, step=1):
    """Fresh-update count at every step in [t_from, t_end) by direct scan."""
    out = []
    for t in range(t_from, t_end, step):
        n = 0
        for f in range(len(tl.friends)):
            r = tl.refreshes(f)
            past = r[r <= t]
            if len(past):
                n += t < past[-1] + tl.windows[f]
            else:
                n += tl.issue <= t < tl.seed_expiry
        out.append(n)
    return np.array(out)


def dense_intervals(tl, k, t_from, t_end):
    c = dense_counts(tl, t_from, t_end)
    out = []
    for x, bad in enumerate(c < k):
        t = t_from + x
        if bad:
            if out and out[-1][1] == t:
                out[-1] = (out[-1][0], t + 1)
            else:
                out.append((t, t + 1))
    return out


def test_daily_friends_give_k_equal_fs_size():
    fs = [f"f{x}" for x in range(5)]
    fi = {j: 2.0 for j in fs}
    pts = {j: [day(d, 3600 + 60 * x) for d in range(1, 20)] for x, j in enumerate(fs)}
    tl = timeline_from_points(fs, fi, pts, issue=day(1))
    choice = select_k(tl, day(20))
    assert (choice.k, choice.flagged) == (5, False)
    assert dense_counts(tl, tl.first_refresh, day(20), step=600).min() == 5


def test_weekly_friend_with_weekly_window():
    tl = timeline_from_points(["a"], {"a": 7.0}, {"a": [day(d) for d in range(0, 56, 7)]}, 0)
    choice = select_k(tl, day(56))
    assert (choice.k, choice.flagged) == (1, False)
    assert invalid_intervals(tl, 1, day(56)) == []


def test_constructed_gap_gives_one_interval():
    pts = {"a": [day(1), day(2), day(10), day(11)]}
    tl = timeline_from_points(["a"], {"a": 2.0}, pts, issue=0)
    assert invalid_intervals(tl, 1, day(12)) == [(day(4), day(10))]
    assert select_k(tl, day(12)).flagged


def test_no_refresh_before_t_end_keeps_size():
    tl = timeline_from_points(["a", "b"], {"a": 1.0, "b": 1.0}, {}, issue=0)
    assert select_k(tl, day(5)).k == 2 and invalid_intervals(tl, 2, day(5)) == []


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 40), st.lists(st.integers(0, 400), max_size=8)),
                min_size=1, max_size=4),
       st.integers(0, 100), st.integers(0, 60))
def test_intervals_match_dense_scan(friends, issue, seed_extra):
    fs = [f"f{x}" for x in range(len(friends))]
    pts = {j: sorted(set(p)) for j, (_, p) in zip(fs, friends)}
    windows = np.array([w for w, _ in friends], dtype=np.int64)
    tl = timeline_from_points(fs, {j: 1.0 for j in fs}, pts, issue)
    tl = Timeline(tl.friends, tl.times, tl.offsets, windows, issue, issue + int(windows.max()) + seed_extra)
    t_end = 450
    if tl.first_refresh is None or tl.first_refresh >= t_end:
        return
    for k in range(1, len(fs) + 1):
        assert invalid_intervals(tl, k, t_end) == dense_intervals(tl, k, tl.first_refresh, t_end)
    choice = select_k(tl, t_end)
    low = int(dense_counts(tl, tl.first_refresh, t_end).min())
    assert choice.min_fresh == low
    assert choice.k == max(1, low) and choice.flagged == (low == 0)
    # monotone: no false positives at k implies none at k-1
    for k in range(2, len(fs) + 1):
        if not invalid_intervals(tl, k, t_end):
            assert not invalid_intervals(tl, k - 1, t_end)


# -- issuance ---------------------------------------------------------------------

@pytest.fixture
def issued(small50_parts):
    ca = Authority(seed=0)
    node = N("n0007")
    cert = issue_certificate(ca, node, small50_parts.training, evaluation=small50_parts.evaluation)
    return ca, node, cert, small50_parts


def test_issued_cert_immediately_valid(issued):
    ca, node, cert, parts = issued
    assert is_valid(cert, parts.boundary, ca)
    assert cert.verify_ca(ca) and all(u.from_authority for u in cert.su.values())


def test_issued_fields_match_construction(issued):
    ca, node, cert, parts = issued
    fs = compute_fs(parts.training, node)
    assert set(cert.fs) == fs
    assert dict(cert.fi) == compute_fi(parts.training, node, fs)
    assert 1 <= cert.k <= len(fs)


def test_issued_k_has_no_false_positive_on_honest_replay(issued):
    ca, node, cert, parts = issued
    ca.enroll_all(parts.evaluation.entities)
    points = sorted((t, e.b if e.a == node else e.a)
                    for e in parts.evaluation.events if node in (e.a, e.b)
                    for t in {e.start, e.end})
    friend_points = [(t, j) for t, j in points if j in cert.fi]
    first = friend_points[0][0]
    # validity only drops just before a refresh, so probe each refresh instant and the second before
    probes = sorted({t for t, _ in friend_points} | {t - 1 for t, _ in friend_points}
                    | {parts.evaluation.t_end - 1})
    c, pos = cert, 0
    for now in probes:
        if now < first:
            continue
        while pos < len(friend_points) and friend_points[pos][0] <= now:
            t, j = friend_points[pos]
            c = refresh_on_meeting(c, j, t, ca.private_key(j))
            pos += 1
        assert is_valid(c, now, ca), now


def test_fixed_k_policy_clamped(small50_parts):
    ca = Authority()
    cert = issue_certificate(ca, N("n0001"), small50_parts.training, k_policy=999)
    assert cert.k == len(cert.fs)
    with pytest.raises(ValueError):
        issue_certificate(ca, N("n0001"), small50_parts.training, k_policy="max-no-fp")


def test_uncertifiable_node(small50_parts):
    with pytest.raises(EmptyFriendSetError):
        issue_certificate(Authority(), N("nobody"), small50_parts.training, k_policy=1)


# -- authentication --------------------------------------------------------------

def test_auth_ok_for_fresh_cert(ca):
    assert authenticate(_pattern_cert(ca, (True, True), 2), ca, day(11)).result is AuthResult.AUTH_OK


def test_auth_denied_after_revocation(ca):
    cert = _pattern_cert(ca, (True, True), 2)

    class Conflict:
        kind = "test"
        accused = cert.owner

        def conflict_reason(self, pki):
            return None

    ca.ca_revoke(Conflict(), day(11))
    resp = authenticate(cert, ca, day(11))
    assert resp.result is AuthResult.AUTH_DENIED and "revoked" in resp.reason


def test_auth_denied_when_stale(ca):
    resp = authenticate(_pattern_cert(ca, (True, False), 2), ca, day(11))
    assert not resp.ok and "fresh" in resp.reason


def test_auth_denied_for_malformed(ca):
    assert not authenticate("garbage", ca, 0).ok
    cert = _pattern_cert(ca, (True, True), 2)
    broken = CommunityCertificate(cert.owner, cert.fs[::-1], cert.fi, cert.k, cert.ca_sig, cert.su)
    assert "malformed" in authenticate(broken, ca, day(11)).reason


# -- closed form -------------------------------------------------------------------

def test_closed_form_order_statistic(ca):
    t0 = day(20)
    cert = make_cert(ca, N("o"), {N("a"): 1.0, N("b"): 3.0, N("c"): 5.0}, 2,
                     {N("a"): t0, N("b"): t0, N("c"): t0})
    assert closed_form_expiry(cert) - t0 == day(3)


def test_closed_form_k1_is_max(ca):
    t0 = day(20)
    cert = make_cert(ca, N("o"), {N("a"): 1.0, N("b"): 3.0, N("c"): 5.0}, 1,
                     {N("a"): t0, N("b"): t0 - day(1), N("c"): t0 - day(4)})
    assert closed_form_expiry(cert) == t0 + day(2)


def test_closed_form_agrees_with_stepping():
    rng = random.Random(8)
    ca = Authority(seed=8)
    for _ in range(100):
        n = rng.randint(1, 6)
        fi = {N(f"f{x}"): rng.choice([0.5, 1.0, 1.5, 2.0, 3.0]) for x in range(n)}
        upd = {j: rng.randrange(0, day(5)) for j in fi if rng.random() < 0.8}
        cert = make_cert(ca, N("o"), fi, rng.randint(1, n), upd)
        exp = closed_form_expiry(cert)
        t0 = max(upd.values(), default=0)          # state is frozen from the last update on
        if exp is None:
            assert not is_valid(cert, t0, ca)
            continue
        assert not is_valid(cert, max(exp, t0), ca)
        if exp > t0:
            assert is_valid(cert, t0, ca) and is_valid(cert, exp - 1, ca)
