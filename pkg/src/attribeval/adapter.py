"""Wire protocol for external model runtimes, plus a conformance checker.

Messages are newline-delimited JSON objects (UTF-8); every request carries a
unique integer id echoed in the reply, and adapters may answer out of order.
The HTTP transport posts the same bodies to /v1/<type>.  A handshake
("hello?" -> "hello") fixes the capability set for the session.

    -> {"type":"hello?","version":1}
    <- {"type":"hello","version":1,"classes":C,"mask_token":s,"capabilities":[...]}
    -> {"type":"predict","id":n,"tokens":[s]}        <- {"type":"prediction","id":n,"probs":[f]}
    -> {"type":"predict_batch","id":n,"batch":[[s]]} <- {"type":"prediction_batch","id":n,"probs":[[f]]}
    -> {"type":"grad_dot","id":n,"tokens":[s],"baseline":[s],"alpha":f,"target":i}
                                                     <- {"type":"grad_dot","id":n,"values":[f]}
    -> {"type":"attention","id":n,"tokens":[s]}      <- {"type":"attention","id":n,"heads":[[[f]]],"alignment":[i]}
    errors: <- {"type":"error","id":n,"code":s,"message":s}
"""

import json
import math
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ModelUnavailableError,
    ProtocolError,
    UnsupportedCapabilityError,
)
from .model import (
    ATTENTION,
    GRAD_DOT,
    PREDICT,
    PROB_SUM_TOL,
    AttentionMap,
    ModelHandle,
    Prediction,
)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0
PIPELINE_WINDOW = 64
GRAD_DOT_CHECK_TOL = 5e-3
KNOWN_CAPABILITIES = (PREDICT, GRAD_DOT, ATTENTION)


@dataclass
class AdapterEndpoint:
    """Where and how to reach an external model runtime."""

    transport: str  # "subprocess-stdio" | "http"
    address: str    # command line or URL
    timeout: float = DEFAULT_TIMEOUT


class _StdioTransport:
    """Line-delimited JSON over a subprocess, with a background reader.

    The reader thread drains the child's stdout continuously (so large
    pipelined bursts can never deadlock on full pipe buffers) and parks each
    reply under its id for whichever caller is waiting on it; replies may
    arrive in any order.  Writes are serialized; the pipeline window bounds
    how many requests may be outstanding at once.
    """

    def __init__(self, command: str, timeout: float):
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise ModelUnavailableError(f"cannot launch adapter {command!r}: {exc}")
        self._cond = threading.Condition()
        self._pending: dict[int, dict] = {}
        self._unaddressed: list[dict] = []  # replies without an id (hello)
        self._progress = 0
        self._dead: str | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                line = self._proc.stdout.readline()
            except ValueError:  # stream closed under us
                line = ""
            with self._cond:
                if not line:
                    self._dead = self._dead or "adapter subprocess closed its output"
                    self._cond.notify_all()
                    return
                try:
                    obj = json.loads(line)
                    if not isinstance(obj, dict):
                        raise ValueError("non-object message")
                except ValueError as exc:
                    self._dead = f"adapter sent invalid JSON: {exc}"
                    self._cond.notify_all()
                    return
                if isinstance(obj.get("id"), int):
                    self._pending[obj["id"]] = obj
                else:
                    self._unaddressed.append(obj)
                self._progress += 1
                self._cond.notify_all()

    def _send(self, obj: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelUnavailableError(f"adapter subprocess went away: {exc}")

    def _wait_for(self, ready, what: str) -> dict:
        """Block until ready() yields a reply; time out only without progress."""
        with self._cond:
            while True:
                reply = ready()
                if reply is not None:
                    return reply
                if self._dead:
                    raise ModelUnavailableError(self._dead)
                seen = self._progress
                if not self._cond.wait(self.timeout) and self._progress == seen:
                    raise ModelUnavailableError(f"timed out waiting for {what}")

    def _take(self, rid):
        def ready():
            if rid is None:
                # id-less requests get id-less replies (error messages)
                return self._unaddressed.pop(0) if self._unaddressed else None
            return self._pending.pop(rid, None)
        return ready

    def request(self, obj: dict) -> dict:
        self._send(obj)
        return self._wait_for(self._take(obj.get("id")), f"reply {obj.get('id')}")

    def request_many(self, objs: list[dict]) -> list[dict]:
        """Pipeline requests, keeping at most PIPELINE_WINDOW outstanding.

        Replies are collected in request order while later requests are still
        being written; the reader thread parks out-of-order arrivals.
        """
        replies: list[dict] = [None] * len(objs)
        sent = collected = 0
        while collected < len(objs):
            while sent < len(objs) and sent - collected < PIPELINE_WINDOW:
                self._send(objs[sent])
                sent += 1
            rid = objs[collected].get("id")
            replies[collected] = self._wait_for(self._take(rid), f"reply {rid}")
            collected += 1
        return replies

    def handshake(self, obj: dict) -> dict:
        self._send(obj)

        def ready():
            return self._unaddressed.pop(0) if self._unaddressed else None

        reply = self._wait_for(ready, "handshake reply")
        return reply

    def close(self) -> None:
        try:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()
        self._reader.join(timeout=5)


class _HttpTransport:
    def __init__(self, url: str, timeout: float):
        self.base = url.rstrip("/")
        self.timeout = timeout

    def _post(self, msg_type: str, obj: dict) -> dict:
        req = urllib.request.Request(
            f"{self.base}/v1/{msg_type}",
            data=json.dumps(obj).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.URLError as exc:
            raise ModelUnavailableError(f"adapter HTTP transport failed: {exc}")
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"adapter sent invalid JSON: {exc.msg}")

    def request(self, obj: dict) -> dict:
        return self._post(obj["type"], obj)

    def request_many(self, objs: list[dict]) -> list[dict]:
        return [self.request(o) for o in objs]

    def handshake(self, obj: dict) -> dict:
        return self._post(obj["type"], obj)

    def close(self) -> None:
        pass


def _open_transport(endpoint: AdapterEndpoint):
    if endpoint.transport == "subprocess-stdio":
        return _StdioTransport(endpoint.address, endpoint.timeout)
    if endpoint.transport == "http":
        return _HttpTransport(endpoint.address, endpoint.timeout)
    raise ProtocolError(f"unknown transport {endpoint.transport!r}")


class AdapterModelHandle(ModelHandle):
    """A ModelHandle whose calls marshal over the adapter protocol."""

    def __init__(self, transport, hello: dict, endpoint: AdapterEndpoint):
        super().__init__(
            model_id=f"adapter:{endpoint.transport}:{endpoint.address}",
            num_classes=hello["classes"],
            mask_token=hello["mask_token"],
            capabilities=hello["capabilities"],
            thread_safe=True,  # calls are serialized through the transport lock
        )
        self._transport = transport
        self._endpoint = endpoint
        self._next_id = 0
        self._id_lock = threading.Lock()

    def _new_id(self) -> int:
        with self._id_lock:
            self._next_id += 1
            return self._next_id

    def _checked(self, reply: dict, expected_type: str, rid: int) -> dict:
        if reply.get("type") == "error":
            code = reply.get("code", "unknown")
            message = reply.get("message", "")
            if code == "unsupported_capability":
                raise UnsupportedCapabilityError(message or code)
            raise ProtocolError(f"adapter error reply [{code}]: {message}")
        if reply.get("type") != expected_type:
            raise ProtocolError(
                f"expected reply type {expected_type!r}, got {reply.get('type')!r}"
            )
        if reply.get("id") != rid:
            raise ProtocolError(f"reply id {reply.get('id')} does not match request {rid}")
        return reply

    def predict(self, tokens: Sequence[str]) -> Prediction:
        rid = self._new_id()
        reply = self._transport.request({"type": "predict", "id": rid, "tokens": list(tokens)})
        self.calls += 1
        return Prediction(tuple(self._checked(reply, "prediction", rid)["probs"]))

    BATCH_CHUNK = 1024

    def predict_batch(self, batch: Sequence[Sequence[str]]) -> list[Prediction]:
        if not batch:
            return []
        requests = []
        for start in range(0, len(batch), self.BATCH_CHUNK):
            chunk = batch[start:start + self.BATCH_CHUNK]
            requests.append({"type": "predict_batch", "id": self._new_id(),
                             "batch": [list(t) for t in chunk]})
        out: list[Prediction] = []
        for req, reply in zip(requests, self._transport.request_many(requests)):
            probs = self._checked(reply, "prediction_batch", req["id"])["probs"]
            if len(probs) != len(req["batch"]):
                raise ProtocolError("prediction_batch reply length mismatch")
            out.extend(Prediction(tuple(p)) for p in probs)
        self.calls += len(batch)
        return out

    def grad_dot(self, tokens, baseline, alpha, target) -> np.ndarray:
        self.require(GRAD_DOT)
        rid = self._new_id()
        reply = self._transport.request({
            "type": "grad_dot", "id": rid, "tokens": list(tokens),
            "baseline": list(baseline), "alpha": float(alpha), "target": int(target),
        })
        values = self._checked(reply, "grad_dot", rid)["values"]
        if len(values) != len(tokens):
            raise ProtocolError("grad_dot reply length mismatch")
        return np.asarray(values, dtype=float)

    def attention(self, tokens: Sequence[str]) -> AttentionMap:
        self.require(ATTENTION)
        rid = self._new_id()
        reply = self._transport.request({"type": "attention", "id": rid, "tokens": list(tokens)})
        body = self._checked(reply, "attention", rid)
        return AttentionMap(tuple(np.asarray(h) for h in body["heads"]),
                            tuple(body["alignment"]))

    def raw_request(self, obj: dict) -> dict:
        """Escape hatch for conformance probing; assigns an id if missing."""
        obj = dict(obj)
        obj.setdefault("id", self._new_id())
        return self._transport.request(obj)

    def close(self) -> None:
        self._transport.close()


def _validate_hello(hello: dict) -> None:
    if hello.get("type") != "hello":
        raise ProtocolError(f"handshake field 'type': expected 'hello', got {hello.get('type')!r}")
    if hello.get("version") != PROTOCOL_VERSION:
        raise ProtocolError(
            f"handshake field 'version': expected {PROTOCOL_VERSION}, got {hello.get('version')!r}"
        )
    classes = hello.get("classes")
    if not isinstance(classes, int) or classes < 2:
        raise ProtocolError(f"handshake field 'classes': expected int >= 2, got {classes!r}")
    mask = hello.get("mask_token")
    if not isinstance(mask, str) or not mask:
        raise ProtocolError(f"handshake field 'mask_token': expected non-empty string, got {mask!r}")
    caps = hello.get("capabilities")
    if (not isinstance(caps, list) or PREDICT not in caps
            or any(c not in KNOWN_CAPABILITIES for c in caps)):
        raise ProtocolError(
            f"handshake field 'capabilities': expected a subset of {list(KNOWN_CAPABILITIES)}"
            f" containing 'predict', got {caps!r}"
        )


def handshake(endpoint: AdapterEndpoint) -> AdapterModelHandle:
    """Open the transport, negotiate capabilities, and wrap it as a ModelHandle."""
    transport = _open_transport(endpoint)
    try:
        hello = transport.handshake({"type": "hello?", "version": PROTOCOL_VERSION})
        _validate_hello(hello)
    except Exception:
        transport.close()
        raise
    return AdapterModelHandle(transport, hello, endpoint)


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    checks: list[ConformanceCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(ConformanceCheck(name, passed, detail))

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if c.passed else 'FAIL'} {c.name}" + (f" ({c.detail})" if c.detail else "")
            for c in self.checks
        ]


def _probe_sequences(handle: AdapterModelHandle, probes: Sequence[Sequence[str]]):
    for tokens in probes:
        yield list(tokens)
    yield [handle.mask_token] * max(1, len(probes[0]) if probes else 3)


def check_conformance(handle: AdapterModelHandle,
                      probes: Sequence[Sequence[str]],
                      seed: int = 0) -> ConformanceReport:
    """Verify the protocol contract against live probe inputs.

    Checks probability normalization, bit-exact determinism, batch/serial
    agreement, attention row-stochasticity when claimed, and grad_dot
    consistency when claimed (a fine midpoint quadrature of the class-logit
    difference derivative must integrate to the observable log-probability
    ratio gap, tolerance 5e-3).  Transport failures are recorded as failed
    checks rather than raised.
    """
    report = ConformanceReport()
    probes = [list(p) for p in probes] or [["a", "b", "c"]]
    rng = np.random.default_rng(seed)
    pool = [t for tokens in probes for t in tokens]
    probes.append([pool[i] for i in rng.permutation(len(pool))][: max(3, len(probes[0]))])

    def run(name: str, fn) -> None:
        try:
            passed, detail = fn()
            report.add(name, passed, detail)
        except Exception as exc:  # failed check, not a crash
            report.add(name, False, f"{type(exc).__name__}: {exc}")

    def check_normalization():
        worst = 0.0
        for tokens in _probe_sequences(handle, probes):
            pred = handle.predict(tokens)
            worst = max(worst, abs(sum(pred.probs) - 1.0))
            if any(p < 0 for p in pred.probs):
                return False, "negative probability"
        return worst <= PROB_SUM_TOL, f"max |sum-1| = {worst:.2e}"

    def check_determinism():
        for tokens in probes:
            first = handle.predict(tokens).probs
            second = handle.predict(tokens).probs
            if first != second:
                return False, f"replies differ on {tokens!r}"
        return True, ""

    def check_batch():
        batch = [list(t) for t in probes]
        batched = handle.predict_batch(batch)
        serial = [handle.predict(t) for t in batch]
        for b, s in zip(batched, serial):
            if b.probs != s.probs:
                return False, "batch and serial predictions disagree"
        return True, ""

    def check_attention():
        for tokens in probes:
            handle.attention(tokens)  # AttentionMap validates rows on construction
        return True, ""

    def check_grad_dot():
        steps = 64
        worst = 0.0
        c0, c1 = 0, 1
        for tokens in probes[:2]:
            baseline = [handle.mask_token] * len(tokens)
            quad = 0.0
            for t in range(1, steps + 1):
                alpha = (t - 0.5) / steps
                g1 = handle.grad_dot(tokens, baseline, alpha, c1)
                g0 = handle.grad_dot(tokens, baseline, alpha, c0)
                quad += float(np.sum(g1) - np.sum(g0))
            quad /= steps
            px = handle.predict(tokens).probs
            pb = handle.predict(baseline).probs
            observed = math.log(px[c1] / px[c0]) - math.log(pb[c1] / pb[c0])
            worst = max(worst, abs(quad - observed))
        return worst <= GRAD_DOT_CHECK_TOL, f"max quadrature gap = {worst:.2e}"

    def check_error_reply():
        reply = handle.raw_request({"type": "no_such_request"})
        ok = isinstance(reply, dict) and reply.get("type") == "error"
        return ok, "" if ok else f"got {reply!r}"

    def check_capability_gate():
        missing = [c for c in (GRAD_DOT, ATTENTION) if not handle.supports(c)]
        if not missing:
            return True, "all capabilities declared"
        cap = missing[0]
        body = {"type": cap, "id": None, "tokens": list(probes[0])}
        if cap == GRAD_DOT:
            body.update(baseline=[handle.mask_token] * len(probes[0]), alpha=0.5, target=0)
        reply = handle.raw_request(body)
        ok = reply.get("type") == "error" and reply.get("code") == "unsupported_capability"
        return ok, "" if ok else f"got {reply!r}"

    run("probs_normalization", check_normalization)
    run("determinism", check_determinism)
    run("batch_consistency", check_batch)
    if handle.supports(ATTENTION):
        run("attention_rows", check_attention)
    if handle.supports(GRAD_DOT):
        run("grad_dot_agreement", check_grad_dot)
    run("error_reply", check_error_reply)
    run("capability_gating", check_capability_gate)
    return report
