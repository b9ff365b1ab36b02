import os
import socket
import threading

import numpy as np
import pytest

from fedrd import SingularInformation, SurvivalDataset, build_time_grid, fit_fedrd_u, fit_pooled
from fedrd.errors import (
    DimensionMismatch,
    DuplicateSite,
    LocalTimeMissingFromGrid,
    MissingSite,
    ProtocolError,
    Timeout,
    TruncatedPayload,
    VersionMismatch,
)
from fedrd.estimator import FitResult
from fedrd.federation import SiteSummaryS, SortedTimes, XbarSeries, site_round1_u, site_summary_s
from fedrd.transport import (
    Envelope,
    FileCarrier,
    TcpCoordinatorCarrier,
    TcpSiteCarrier,
    decode_message,
    encode_message,
    read_frame,
    run_coordinator,
    run_site,
    write_frame,
)

from conftest import random_dataset, random_partition

A = SurvivalDataset([1.0], [1], [[0.0]])
B = SurvivalDataset([2.0], [1], [[1.0]])

SUMMARY_TEXT = (
    "FEDRD/1 SUMMARY_S study=demo site=site1 round=1\n"
    "p=1 n=2\n"
    "A:\n0.5\n"
    "D:\n-0.5\n"
    "SIGMA:\n0.25\n"
    "end\n"
)


def test_summary_s_encoding(pair):
    data = encode_message(Envelope("SUMMARY_S", "site1", 1, "demo"), site_summary_s(pair, "site1"))
    assert data.decode() == SUMMARY_TEXT
    env, payload = decode_message(data)
    assert env == Envelope("SUMMARY_S", "site1", 1, "demo")
    assert (payload.a_k.tolist(), payload.d_k.tolist(), payload.sigma_k.tolist(), payload.n_k) == (
        [[0.5]], [-0.5], [[0.25]], 2)


def test_times_encoding():
    data = encode_message(Envelope("TIMES", "s", 1, "demo"), SortedTimes("s", np.array([1.0, 2.0])))
    lines = data.decode().splitlines()
    assert lines[1] == "p=0 n=2" and lines[2:] == ["times:", "1 2", "end"]


def test_grid_and_xbar_round_trip():
    grid = build_time_grid([0.1, 0.1, 0.7, 2.5])
    _, back = decode_message(encode_message(Envelope("GRID", "c", 1, "st"), grid))
    assert back == grid
    xbar = XbarSeries(grid, np.array([[0.5, 1 / 3], [0.25, 2.0], [1e-300, -0.0], [7.0, 1e300]]))
    _, back = decode_message(encode_message(Envelope("XBAR", "c", 2, "st"), xbar))
    assert back.grid == grid and back.xbars.tobytes() == xbar.xbars.tobytes()


def test_decode_errors():
    with pytest.raises(VersionMismatch):
        decode_message(SUMMARY_TEXT.replace("FEDRD/1", "FEDRD/2").encode())
    xsums = "FEDRD/1 RISK_AGG study=s site=a round=2\np=1 n=2\ncounts:\n1 0\nxsums:\n0\nend\n"
    with pytest.raises(TruncatedPayload):
        decode_message(xsums.encode())
    with pytest.raises(TruncatedPayload):
        decode_message(SUMMARY_TEXT.replace("end\n", "").encode())
    with pytest.raises(DimensionMismatch):
        decode_message(SUMMARY_TEXT.replace("p=1", "p=2").encode())
    with pytest.raises(DimensionMismatch):
        decode_message("FEDRD/1 TIMES study=s site=a round=1\np=0 n=3\ntimes:\n1 2\nend\n".encode())


def test_envelope_validation():
    with pytest.raises(ProtocolError):
        Envelope("TIMES", "a", 2, "s")
    with pytest.raises(ProtocolError):
        Envelope("PING", "a", 1, "s")
    with pytest.raises(ProtocolError):
        Envelope("TIMES", "bad id", 1, "s")
    with pytest.raises(ProtocolError):
        encode_message(Envelope("TIMES", "a", 1, "s"), build_time_grid([1.0]))


def test_fit_round_trip():
    fit = FitResult(np.array([-0.0, 1e-300]), np.array([[1e300, 0.1], [0.1, 0.2]]), 7, "fedrd_u")
    env, back = decode_message(encode_message(Envelope("FIT", "c", 3, "s"), fit))
    assert back.beta.tobytes() == fit.beta.tobytes() and back.cov.tobytes() == fit.cov.tobytes()
    assert (back.n, back.method, env.round) == (7, "fedrd_u", 3)


def test_frame_round_trip():
    a, b = socket.socketpair()
    with a, b:
        write_frame(a, b"hello\n")
        assert read_frame(b) == b"hello\n"
        a.sendall(b"\x00\x00\x00\x09abc")
        a.close()
        with pytest.raises(TruncatedPayload):
            read_frame(b)


def _serve(carriers, sites, method, ids=None):
    ids = ids or [f"site{k + 1}" for k in range(len(sites))]
    errors = []

    def go(c, s, i):
        try:
            run_site(c, s, method, i, timeout=10)
        except Exception as exc:  # collected for assertions
            errors.append(exc)

    threads = [threading.Thread(target=go, args=a) for a in zip(carriers, sites, ids)]
    for t in threads:
        t.start()
    return threads, errors


def test_file_carrier_singleton_split(tmp_path):
    threads, errors = _serve([FileCarrier(tmp_path, "pair") for _ in range(2)], [A, B], "fedrd_u")
    fit = run_coordinator(FileCarrier(tmp_path, "pair"), "fedrd_u", 2, timeout=10)
    for t in threads:
        t.join()
    assert not errors
    assert fit.beta.tolist() == [-1.0] and fit.cov.tolist() == [[1.0]]
    names = sorted(os.listdir(tmp_path / "pair"))
    assert names == [
        "1_GRID_coordinator.msg", "1_TIMES_site1.msg", "1_TIMES_site2.msg",
        "2_RISK_AGG_site1.msg", "2_RISK_AGG_site2.msg", "2_XBAR_coordinator.msg",
        "3_CONTRIB_U_site1.msg", "3_CONTRIB_U_site2.msg", "3_FIT_coordinator.msg",
    ]


def test_file_carrier_stratified_singular(tmp_path):
    threads, errors = _serve([FileCarrier(tmp_path, "s") for _ in range(2)], [A, B], "fedrd_s")
    for t in threads:
        t.join()
    assert not errors
    assert sorted(os.listdir(tmp_path / "s")) == ["1_SUMMARY_S_site1.msg", "1_SUMMARY_S_site2.msg"]
    with pytest.raises(SingularInformation):
        run_coordinator(FileCarrier(tmp_path, "s"), "fedrd_s", 2, timeout=5)


def test_zero_sites_rejected(tmp_path):
    with pytest.raises(ValueError):
        run_coordinator(FileCarrier(tmp_path, "z"), "fedrd_u", 0)


@pytest.mark.parametrize("method", ["fedrd_u", "fedrd_s"])
def test_tcp_matches_file_carrier(tmp_path, method):
    rng = np.random.default_rng(4)
    sites = random_partition(rng, random_dataset(rng, n=200, p=3, ties=True), 3)
    threads, errors = _serve([FileCarrier(tmp_path, "st") for _ in sites], sites, method)
    file_fit = run_coordinator(FileCarrier(tmp_path, "st"), method, 3, timeout=10, fit_path=tmp_path / "f.msg")
    for t in threads:
        t.join()
    coord = TcpCoordinatorCarrier("127.0.0.1", 0, "st")
    host, port = coord.address
    threads, errors2 = _serve([TcpSiteCarrier(host, port, "st") for _ in sites], sites, method)
    tcp_fit = run_coordinator(coord, method, 3, timeout=10, fit_path=tmp_path / "t.msg")
    coord.close()
    for t in threads:
        t.join()
    assert not errors and not errors2
    assert (tmp_path / "f.msg").read_bytes() == (tmp_path / "t.msg").read_bytes()
    assert np.array_equal(file_fit.beta, tcp_fit.beta)
    expected = {"fedrd_u": {"TIMES": 3, "RISK_AGG": 3, "CONTRIB_U": 3}, "fedrd_s": {"SUMMARY_S": 3}}[method]
    assert dict(coord.received) == expected
    assert sum(coord.sent.values()) == (2 if method == "fedrd_u" else 0)
    if method == "fedrd_u":
        assert np.array_equal(tcp_fit.beta, fit_fedrd_u(sites).beta)
        np.testing.assert_allclose(tcp_fit.beta, fit_pooled(sites).beta, rtol=1e-10)


def test_timeout_when_site_missing(tmp_path):
    threads, _ = _serve([FileCarrier(tmp_path, "t")], [A], "fedrd_s")
    with pytest.raises(Timeout):
        run_coordinator(FileCarrier(tmp_path, "t"), "fedrd_s", 2, timeout=0.3)
    for t in threads:
        t.join()


def test_missing_site_in_later_round(tmp_path):
    carrier = FileCarrier(tmp_path, "m")
    for sid, s in (("a", A), ("b", B)):
        carrier.send(Envelope("TIMES", sid, 1, "m"), site_round1_u(s, sid))
    with pytest.raises(MissingSite, match="'b'"):
        coordinator = FileCarrier(tmp_path, "m")
        threading.Timer(0.2, lambda: run_site_round2_only(tmp_path, A, "a")).start()
        run_coordinator(coordinator, "fedrd_u", 2, timeout=1.0)


def run_site_round2_only(tmp_path, data, sid):
    from fedrd.federation import site_round2_u

    c = FileCarrier(tmp_path, "m")
    _, grid = c.receive(1, "GRID", 5)
    c.send(Envelope("RISK_AGG", sid, 2, "m"), site_round2_u(data, grid, sid))


def test_tcp_duplicate_site():
    coord = TcpCoordinatorCarrier("127.0.0.1", 0, "d")
    host, port = coord.address
    payload = site_summary_s(A, "a")
    senders = [TcpSiteCarrier(host, port, "d") for _ in range(2)]
    for s in senders:
        s.send(Envelope("SUMMARY_S", "a", 1, "d"), payload)
    try:
        with pytest.raises(DuplicateSite):
            run_coordinator(coord, "fedrd_s", 2, timeout=5)
    finally:
        for s in senders:
            s.close()
        coord.close()


def test_site_rejects_grid_without_its_times(tmp_path):
    carrier = FileCarrier(tmp_path, "g")
    carrier.broadcast(Envelope("GRID", "coordinator", 1, "g"), build_time_grid([5.0]))
    with pytest.raises(LocalTimeMissingFromGrid):
        run_site(FileCarrier(tmp_path, "g"), A, "fedrd_u", "a", timeout=2)


def test_site_times_out_without_broadcast(tmp_path):
    with pytest.raises(Timeout):
        run_site(FileCarrier(tmp_path, "w"), A, "fedrd_u", "a", timeout=0.2)


def test_wrong_study_rejected(tmp_path):
    FileCarrier(tmp_path, "x").send(Envelope("SUMMARY_S", "a", 1, "y"), site_summary_s(A, "a"))
    # the file lands under study "x" but declares study "y"
    with pytest.raises(ProtocolError):
        run_coordinator(FileCarrier(tmp_path, "x"), "fedrd_s", 1, timeout=2)


def test_summary_payload_type_is_checked():
    with pytest.raises(ProtocolError):
        encode_message(Envelope("SUMMARY_S", "a", 1, "s"), SortedTimes("a", np.array([1.0])))
    assert isinstance(site_summary_s(A, "a"), SiteSummaryS)
