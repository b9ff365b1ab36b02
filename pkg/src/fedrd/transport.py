"""Wire format and carriers for running sites and the coordinator as separate processes.

Message grammar (UTF-8, LF line endings)::

    FEDRD/1 <MSG_TYPE> study=<id> site=<id> round=<r>
    p=<int> n=<int>
    <tag>:
    <whitespace-separated values>
    ...
    end

Floats are written in shortest round-trip form, so decoding reproduces the
exact bit pattern. Two carriers move the same bytes: a shared directory
(one file per message, written atomically) and TCP with a 4-byte
big-endian length prefix per message.
"""

from __future__ import annotations

import glob
import logging
import os
import re
import selectors
import socket
import struct
import time
from collections import Counter
from dataclasses import dataclass
from typing import Any

import numpy as np

from .data import SurvivalDataset, TimeGrid, format_float
from .errors import (
    DimensionMismatch,
    DuplicateSite,
    MissingSite,
    ProtocolError,
    Timeout,
    TruncatedPayload,
    VersionMismatch,
    WireError,
)
from .estimator import METHODS, FitResult
from .federation import (
    RiskAggregate,
    SiteContributionU,
    SiteSummaryS,
    SortedTimes,
    XbarSeries,
    coordinator_assemble_s,
    coordinator_assemble_u,
    coordinator_merge_times,
    coordinator_xbar,
    site_round1_u,
    site_round2_u,
    site_round3_u,
    site_summary_s,
)

log = logging.getLogger(__name__)

__all__ = [
    "PROTOCOL",
    "Envelope",
    "FileCarrier",
    "TcpCoordinatorCarrier",
    "TcpSiteCarrier",
    "decode_message",
    "default_timeout",
    "encode_message",
    "read_frame",
    "run_coordinator",
    "run_site",
    "write_frame",
]

PROTOCOL = "FEDRD/1"
DEFAULT_TIMEOUT = 60.0
POLL_INTERVAL = 0.05
MAX_FRAME = 1 << 30

_PAYLOAD_TYPES = {
    "TIMES": SortedTimes,
    "GRID": TimeGrid,
    "RISK_AGG": RiskAggregate,
    "XBAR": XbarSeries,
    "CONTRIB_U": SiteContributionU,
    "SUMMARY_S": SiteSummaryS,
    "FIT": FitResult,
}
_ROUND_OF = {"TIMES": 1, "GRID": 1, "RISK_AGG": 2, "XBAR": 2, "CONTRIB_U": 3, "SUMMARY_S": 1}
_ID = re.compile(r"^[A-Za-z0-9_.\-]+$")


def default_timeout() -> float:
    """Per-round timeout in seconds, overridable with ``FEDRD_TIMEOUT_SECS``."""
    raw = os.environ.get("FEDRD_TIMEOUT_SECS")
    return float(raw) if raw else DEFAULT_TIMEOUT


@dataclass(frozen=True)
class Envelope:
    msg_type: str
    site_id: str
    round: int
    study_id: str
    protocol_version: str = PROTOCOL

    def __post_init__(self):
        if self.msg_type not in _PAYLOAD_TYPES:
            raise ProtocolError(f"unknown message type {self.msg_type!r}")
        if not 1 <= self.round <= 3:
            raise ProtocolError(f"round must be 1..3, got {self.round}")
        expected = _ROUND_OF.get(self.msg_type)
        if expected is not None and self.round != expected:
            raise ProtocolError(f"{self.msg_type} belongs to round {expected}, not {self.round}")
        for name in ("site_id", "study_id"):
            if not _ID.match(getattr(self, name)):
                raise ProtocolError(f"{name} must match [A-Za-z0-9_.-]+, got {getattr(self, name)!r}")


# ------------------------------------------------------------------- encoding


def _row(values) -> str:
    return " ".join(format_float(v) for v in values)


def _int_row(values) -> str:
    return " ".join(str(int(v)) for v in values)


def _matrix(lines: list[str], mat: np.ndarray) -> None:
    for r in np.atleast_2d(mat):
        lines.append(_row(r))


def encode_message(env: Envelope, payload: Any) -> bytes:
    """Canonical text encoding of one envelope and its payload."""
    kind = _PAYLOAD_TYPES[env.msg_type]
    if not isinstance(payload, kind):
        raise ProtocolError(f"{env.msg_type} expects {kind.__name__}, got {type(payload).__name__}")
    lines = [f"{env.protocol_version} {env.msg_type} study={env.study_id} site={env.site_id} round={env.round}"]
    t = env.msg_type
    if t == "TIMES":
        lines += [f"p=0 n={payload.times.shape[0]}", "times:", _row(payload.times)]
    elif t == "GRID":
        lines += [f"p=0 n={len(payload)}", "times:", _row(payload.times), "deltas:", _row(payload.deltas)]
    elif t == "RISK_AGG":
        n, p = payload.xsums.shape
        lines += [f"p={p} n={n}", "counts:", _int_row(payload.counts), "xsums:"]
        _matrix(lines, payload.xsums)
    elif t == "XBAR":
        n, p = payload.xbars.shape
        lines += [f"p={p} n={n}", "times:", _row(payload.grid.times), "deltas:", _row(payload.grid.deltas), "xbars:"]
        _matrix(lines, payload.xbars)
    elif t in ("CONTRIB_U", "SUMMARY_S"):
        if t == "CONTRIB_U":
            a, d, s, n = payload.a_part, payload.d_part, payload.sigma_part, payload.n_k
        else:
            a, d, s, n = payload.a_k, payload.d_k, payload.sigma_k, payload.n_k
        lines += [f"p={d.shape[0]} n={int(n)}", "A:"]
        _matrix(lines, a)
        lines += ["D:", _row(d), "SIGMA:"]
        _matrix(lines, s)
    else:  # FIT
        lines += [f"p={payload.p} n={int(payload.n)}", "beta:", _row(payload.beta), "cov:"]
        _matrix(lines, payload.cov)
        lines += ["method:", payload.method, "n:", str(int(payload.n))]
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("utf-8")


class _Reader:
    def __init__(self, lines: list[str]):
        self.lines = lines
        self.pos = 0

    def _next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise TruncatedPayload(f"message ended while reading {what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def tag(self, name: str) -> None:
        line = self._next(f"tag {name}:")
        if line != f"{name}:":
            raise TruncatedPayload(f"expected tag '{name}:', found {line!r}")

    def values(self, width: int, what: str, conv=float) -> np.ndarray:
        line = self._next(what)
        if line == "end" or line.endswith(":"):
            raise TruncatedPayload(f"missing line for {what}")
        parts = line.split()
        if len(parts) != width:
            raise DimensionMismatch(f"{what}: expected {width} values, found {len(parts)}")
        try:
            return np.array([conv(v) for v in parts], dtype=float if conv is float else np.int64)
        except ValueError:
            raise WireError(f"{what}: non-numeric value") from None

    def matrix(self, rows: int, width: int, what: str) -> np.ndarray:
        return np.array([self.values(width, f"{what} row {i}") for i in range(rows)]).reshape(rows, width)

    def word(self, what: str) -> str:
        line = self._next(what)
        if line == "end" or line.endswith(":"):
            raise TruncatedPayload(f"missing line for {what}")
        return line.strip()

    def end(self) -> None:
        line = self._next("terminator")
        if line != "end":
            raise DimensionMismatch(f"expected 'end', found {line!r}")
        if any(rest.strip() for rest in self.lines[self.pos :]):
            raise WireError("content after 'end'")


def decode_message(data: bytes) -> tuple[Envelope, Any]:
    """Exact inverse of :func:`encode_message`."""
    text = data.decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TruncatedPayload("empty message")
    head = lines[0].split()
    if not head or head[0] != PROTOCOL:
        raise VersionMismatch(f"expected {PROTOCOL}, got {head[0] if head else ''!r}")
    if len(head) != 5:
        raise WireError(f"malformed header line {lines[0]!r}")
    fields = dict(tok.split("=", 1) for tok in head[2:] if "=" in tok)
    try:
        env = Envelope(head[1], fields["site"], int(fields["round"]), fields["study"])
    except (KeyError, ValueError):
        raise WireError(f"malformed header line {lines[0]!r}") from None
    if len(lines) < 2:
        raise TruncatedPayload("missing dimension line")
    dims = re.fullmatch(r"p=(\d+) n=(\d+)", lines[1])
    if not dims:
        raise WireError(f"malformed dimension line {lines[1]!r}")
    p, n = int(dims.group(1)), int(dims.group(2))
    r = _Reader(lines[2:])
    t = env.msg_type
    if t == "TIMES":
        r.tag("times")
        payload = SortedTimes(env.site_id, r.values(n, "times"))
    elif t == "GRID":
        r.tag("times")
        times = r.values(n, "times")
        r.tag("deltas")
        payload = TimeGrid(times, r.values(n, "deltas"))
    elif t == "RISK_AGG":
        r.tag("counts")
        counts = r.values(n, "counts", conv=int)
        r.tag("xsums")
        payload = RiskAggregate(env.site_id, counts, r.matrix(n, p, "xsums"))
    elif t == "XBAR":
        r.tag("times")
        times = r.values(n, "times")
        r.tag("deltas")
        deltas = r.values(n, "deltas")
        r.tag("xbars")
        payload = XbarSeries(TimeGrid(times, deltas), r.matrix(n, p, "xbars"))
    elif t in ("CONTRIB_U", "SUMMARY_S"):
        r.tag("A")
        a = r.matrix(p, p, "A")
        r.tag("D")
        d = r.values(p, "D")
        r.tag("SIGMA")
        s = r.matrix(p, p, "SIGMA")
        cls = SiteContributionU if t == "CONTRIB_U" else SiteSummaryS
        payload = cls(env.site_id, a, d, s, n)
    else:
        r.tag("beta")
        beta = r.values(p, "beta")
        r.tag("cov")
        cov = r.matrix(p, p, "cov")
        r.tag("method")
        method = r.word("method")
        if method not in METHODS:
            raise WireError(f"unknown method tag {method!r}")
        r.tag("n")
        fit_n = int(r.word("n"))
        if fit_n != n:
            raise DimensionMismatch(f"n line {fit_n} disagrees with declared n={n}")
        payload = FitResult(beta, cov, fit_n, method)
    r.end()
    return env, payload


# -------------------------------------------------------------------- framing


def write_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(struct.pack(">I", len(data)) + data)


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    buf = bytearray()
    while len(buf) < size:
        chunk = sock.recv(size - len(buf))
        if not chunk:
            raise TruncatedPayload("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    (size,) = struct.unpack(">I", _recv_exact(sock, 4))
    if size > MAX_FRAME:
        raise WireError(f"frame of {size} bytes exceeds limit")
    return _recv_exact(sock, size)


# ------------------------------------------------------------------- carriers


def _check_incoming(env: Envelope, study_id: str, msg_type: str, round_: int) -> None:
    if env.study_id != study_id:
        raise ProtocolError(f"message for study {env.study_id!r}, expected {study_id!r}")
    if env.msg_type != msg_type or env.round != round_:
        raise ProtocolError(f"expected {msg_type} in round {round_}, got {env.msg_type} in round {env.round}")


def _finish_collect(found: dict, expected: int, known: set | None, msg_type: str, round_: int):
    if known is not None:
        extra = set(found) - known
        if extra:
            raise ProtocolError(f"{msg_type} from site(s) not seen in round 1: {sorted(extra)}")
    if len(found) > expected:
        raise ProtocolError(f"{len(found)} sites sent {msg_type}, expected {expected}")
    return [found[k] for k in sorted(found)]


def _timeout_error(found: dict, expected: int, known: set | None, msg_type: str, round_: int, timeout: float):
    if known is not None and known - set(found):
        return MissingSite(f"round {round_}: no {msg_type} from {sorted(known - set(found))} within {timeout:g} s")
    return Timeout(f"round {round_}: {len(found)} of {expected} {msg_type} messages within {timeout:g} s")


class FileCarrier:
    """Message exchange through a shared directory.

    Message files are named ``<study_id>/<round>_<MSG_TYPE>_<site_id>.msg``
    and written through a temporary file plus rename, so readers never see
    partial content. Either side polls every 50 ms. The same object serves a
    site or the coordinator.
    """

    def __init__(self, directory, study_id: str, poll_interval: float = POLL_INTERVAL):
        if not _ID.match(study_id):
            raise ProtocolError(f"invalid study id {study_id!r}")
        self.study_id = study_id
        self.root = os.path.join(os.fspath(directory), study_id)
        self.poll_interval = poll_interval
        self.sent: Counter = Counter()
        self.received: Counter = Counter()
        os.makedirs(self.root, exist_ok=True)

    def path(self, round_: int, msg_type: str, site_id: str) -> str:
        return os.path.join(self.root, f"{round_}_{msg_type}_{site_id}.msg")

    def _write(self, env: Envelope, payload) -> None:
        data = encode_message(env, payload)
        final = self.path(env.round, env.msg_type, env.site_id)
        tmp = os.path.join(self.root, f".{os.path.basename(final)}.{os.getpid()}.tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, final)
        self.sent[env.msg_type] += 1

    def _read(self, path: str):
        with open(path, "rb") as fh:
            env, payload = decode_message(fh.read())
        self.received[env.msg_type] += 1
        return env, payload

    # site side
    def send(self, env: Envelope, payload) -> None:
        self._write(env, payload)

    def receive(self, round_: int, msg_type: str, timeout: float):
        deadline = time.monotonic() + timeout
        pattern = os.path.join(self.root, f"{round_}_{msg_type}_*.msg")
        while True:
            hits = sorted(glob.glob(pattern))
            if len(hits) > 1:
                raise ProtocolError(f"more than one {msg_type} broadcast in {self.root}")
            if hits:
                env, payload = self._read(hits[0])
                _check_incoming(env, self.study_id, msg_type, round_)
                return env, payload
            if time.monotonic() >= deadline:
                raise Timeout(f"no {msg_type} broadcast within {timeout:g} s")
            time.sleep(self.poll_interval)

    def close(self) -> None:
        pass

    # coordinator side
    def collect(self, round_: int, msg_type: str, expected: int, timeout: float, known=None):
        deadline = time.monotonic() + timeout
        pattern = os.path.join(self.root, f"{round_}_{msg_type}_*.msg")
        prefix = f"{round_}_{msg_type}_"
        found: dict[str, tuple] = {}
        while True:
            for path in sorted(glob.glob(pattern)):
                site = os.path.basename(path)[len(prefix) : -len(".msg")]
                if site in found:
                    continue
                env, payload = self._read(path)
                _check_incoming(env, self.study_id, msg_type, round_)
                if env.site_id != site:
                    raise ProtocolError(f"{path} carries site id {env.site_id!r}")
                found[site] = (env, payload)
            if len(found) >= expected or (known is not None and set(found) - known):
                return _finish_collect(found, expected, known, msg_type, round_)
            if time.monotonic() >= deadline:
                raise _timeout_error(found, expected, known, msg_type, round_, timeout)
            time.sleep(self.poll_interval)

    def broadcast(self, env: Envelope, payload) -> None:
        self._write(env, payload)

    def end_round(self) -> None:
        pass

    def publish_fit(self, env: Envelope, payload: FitResult) -> bytes:
        self._write(env, payload)
        with open(self.path(env.round, env.msg_type, env.site_id), "rb") as fh:
            return fh.read()


class TcpCoordinatorCarrier:
    """Coordinator end of the TCP carrier.

    Sites open one connection per round and send a single length-prefixed
    message. Connections stay open until the round's broadcast has been
    written to each of them (or the round ends without one).
    """

    def __init__(self, host: str, port: int, study_id: str):
        self.study_id = study_id
        self.sent: Counter = Counter()
        self.received: Counter = Counter()
        self._listener = socket.create_server((host, port), reuse_port=False)
        self._listener.setblocking(False)
        self._open: dict[str, socket.socket] = {}

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    def collect(self, round_: int, msg_type: str, expected: int, timeout: float, known=None):
        deadline = time.monotonic() + timeout
        sel = selectors.DefaultSelector()
        sel.register(self._listener, selectors.EVENT_READ, None)
        buffers: dict[socket.socket, bytearray] = {}
        found: dict[str, tuple] = {}
        try:
            while len(found) < expected:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise _timeout_error(found, expected, known, msg_type, round_, timeout)
                for key, _ in sel.select(timeout=min(remaining, 0.5)):
                    if key.data is None:
                        try:
                            conn, _addr = self._listener.accept()
                        except BlockingIOError:
                            continue
                        conn.setblocking(False)
                        buffers[conn] = bytearray()
                        sel.register(conn, selectors.EVENT_READ, "peer")
                        continue
                    conn = key.fileobj
                    try:
                        chunk = conn.recv(65536)
                    except (BlockingIOError, InterruptedError):
                        continue
                    except OSError:
                        chunk = b""
                    if not chunk:
                        sel.unregister(conn)
                        buffers.pop(conn, None)
                        conn.close()
                        continue
                    buf = buffers[conn]
                    buf += chunk
                    if len(buf) < 4:
                        continue
                    (size,) = struct.unpack(">I", bytes(buf[:4]))
                    if size > MAX_FRAME:
                        raise WireError(f"frame of {size} bytes exceeds limit")
                    if len(buf) < 4 + size:
                        continue
                    sel.unregister(conn)
                    del buffers[conn]
                    env, payload = decode_message(bytes(buf[4 : 4 + size]))
                    self.received[env.msg_type] += 1
                    _check_incoming(env, self.study_id, msg_type, round_)
                    if env.site_id in found:
                        conn.close()
                        raise DuplicateSite(f"site {env.site_id!r} sent {msg_type} twice in round {round_}")
                    if known is not None and env.site_id not in known:
                        conn.close()
                        raise ProtocolError(f"{msg_type} from site {env.site_id!r} not seen in round 1")
                    conn.setblocking(True)
                    self._open[env.site_id] = conn
                    found[env.site_id] = (env, payload)
            return _finish_collect(found, expected, known, msg_type, round_)
        finally:
            for conn in list(buffers):
                conn.close()
            sel.close()

    def broadcast(self, env: Envelope, payload) -> None:
        data = encode_message(env, payload)
        for site in sorted(self._open):
            write_frame(self._open[site], data)
        self.sent[env.msg_type] += 1
        self.end_round()

    def end_round(self) -> None:
        for conn in self._open.values():
            conn.close()
        self._open.clear()

    def publish_fit(self, env: Envelope, payload: FitResult) -> bytes:
        return encode_message(env, payload)

    def close(self) -> None:
        self.end_round()
        self._listener.close()


class TcpSiteCarrier:
    """Site end of the TCP carrier; connects afresh for every round."""

    def __init__(self, host: str, port: int, study_id: str, connect_timeout: float | None = None):
        self.host, self.port = host, port
        self.study_id = study_id
        self.connect_timeout = default_timeout() if connect_timeout is None else connect_timeout
        self.sent: Counter = Counter()
        self.received: Counter = Counter()
        self._sock: socket.socket | None = None

    def send(self, env: Envelope, payload) -> None:
        self.close()
        deadline = time.monotonic() + self.connect_timeout
        while True:
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=5.0)
                break
            except OSError:
                if time.monotonic() >= deadline:
                    raise Timeout(f"could not reach coordinator at {self.host}:{self.port}") from None
                time.sleep(POLL_INTERVAL)
        self._sock.settimeout(None)
        write_frame(self._sock, encode_message(env, payload))
        self.sent[env.msg_type] += 1

    def receive(self, round_: int, msg_type: str, timeout: float):
        if self._sock is None:
            raise ProtocolError("receive() before send()")
        self._sock.settimeout(timeout)
        try:
            data = read_frame(self._sock)
        except socket.timeout:
            raise Timeout(f"no {msg_type} broadcast within {timeout:g} s") from None
        finally:
            self.close()
        env, payload = decode_message(data)
        self.received[env.msg_type] += 1
        _check_incoming(env, self.study_id, msg_type, round_)
        return env, payload

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


# ------------------------------------------------------------------- protocol


def run_coordinator(
    carrier,
    method: str,
    expected_sites: int,
    *,
    coordinator_id: str = "coordinator",
    timeout: float | None = None,
    fit_path=None,
) -> FitResult:
    """Drive one federated fit from the coordinator's side.

    Each round waits until all ``expected_sites`` payloads are present
    before aggregating. Payloads are processed in site-id order, so the
    result does not depend on arrival order. The final FIT message is
    published through the carrier and, if ``fit_path`` is given, written
    there as well.
    """
    if method not in ("fedrd_u", "fedrd_s"):
        raise ValueError(f"method must be fedrd_u or fedrd_s, got {method!r}")
    if expected_sites < 1:
        raise ValueError("expected_sites must be at least 1")
    timeout = default_timeout() if timeout is None else timeout
    study = carrier.study_id

    if method == "fedrd_s":
        msgs = carrier.collect(1, "SUMMARY_S", expected_sites, timeout)
        carrier.end_round()
        fit = coordinator_assemble_s([p for _, p in msgs])
        final_round = 1
    else:
        msgs = carrier.collect(1, "TIMES", expected_sites, timeout)
        sites = {e.site_id for e, _ in msgs}
        grid = coordinator_merge_times([p for _, p in msgs])
        carrier.broadcast(Envelope("GRID", coordinator_id, 1, study), grid)
        msgs = carrier.collect(2, "RISK_AGG", expected_sites, timeout, known=sites)
        xbar = coordinator_xbar([p for _, p in msgs], grid)
        carrier.broadcast(Envelope("XBAR", coordinator_id, 2, study), xbar)
        msgs = carrier.collect(3, "CONTRIB_U", expected_sites, timeout, known=sites)
        carrier.end_round()
        fit = coordinator_assemble_u([p for _, p in msgs])
        final_round = 3
    data = carrier.publish_fit(Envelope("FIT", coordinator_id, final_round, study), fit)
    if fit_path is not None:
        with open(fit_path, "wb") as fh:
            fh.write(data)
    log.info("study %s: %s fit from %d sites", study, method, expected_sites)
    return fit


def run_site(carrier, data: SurvivalDataset, method: str, site_id: str, *, timeout: float | None = None) -> None:
    """Answer the coordinator's rounds for one site.

    Only summary payloads leave the site; individual rows never do.
    """
    if method not in ("fedrd_u", "fedrd_s"):
        raise ValueError(f"method must be fedrd_u or fedrd_s, got {method!r}")
    timeout = default_timeout() if timeout is None else timeout
    study = carrier.study_id
    try:
        if method == "fedrd_s":
            carrier.send(Envelope("SUMMARY_S", site_id, 1, study), site_summary_s(data, site_id))
            return
        carrier.send(Envelope("TIMES", site_id, 1, study), site_round1_u(data, site_id))
        _, grid = carrier.receive(1, "GRID", timeout)
        carrier.send(Envelope("RISK_AGG", site_id, 2, study), site_round2_u(data, grid, site_id))
        _, xbar = carrier.receive(2, "XBAR", timeout)
        carrier.send(Envelope("CONTRIB_U", site_id, 3, study), site_round3_u(data, xbar, site_id))
    finally:
        carrier.close()
