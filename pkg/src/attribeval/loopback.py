"""Serve a built-in model over the adapter protocol (stdio or HTTP).

Lets the engine talk to its own models through the wire, for protocol
round-trip tests and conformance self-checks:

    python -m attribeval.loopback --config models.json --model linear
    python -m attribeval.loopback --config models.json --model attention --http 8731
"""

import argparse
import json
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer

from .adapter import PROTOCOL_VERSION
from .errors import UnsupportedCapabilityError
from .model import ATTENTION, GRAD_DOT, ModelHandle, model_from_config


def _capabilities(model: ModelHandle) -> list[str]:
    caps = ["predict"]
    if model.supports(GRAD_DOT):
        caps.append("grad_dot")
    if model.supports(ATTENTION):
        caps.append("attention")
    return caps


def _error(rid, code: str, message: str) -> dict:
    return {"type": "error", "id": rid, "code": code, "message": message}


def handle_message(model: ModelHandle, obj: dict) -> dict:
    """Dispatch one protocol request to the model; never raises."""
    rid = obj.get("id")
    try:
        msg_type = obj.get("type")
        if msg_type == "hello?":
            return {
                "type": "hello",
                "version": PROTOCOL_VERSION,
                "classes": model.num_classes,
                "mask_token": model.mask_token,
                "capabilities": _capabilities(model),
            }
        if msg_type == "predict":
            probs = model.predict(obj["tokens"]).probs
            return {"type": "prediction", "id": rid, "probs": [float(p) for p in probs]}
        if msg_type == "predict_batch":
            preds = model.predict_batch(obj["batch"])
            return {"type": "prediction_batch", "id": rid,
                    "probs": [[float(p) for p in pred.probs] for pred in preds]}
        if msg_type == "grad_dot":
            values = model.grad_dot(obj["tokens"], obj["baseline"],
                                    float(obj["alpha"]), int(obj["target"]))
            return {"type": "grad_dot", "id": rid, "values": [float(v) for v in values]}
        if msg_type == "attention":
            amap = model.attention(obj["tokens"])
            return {"type": "attention", "id": rid,
                    "heads": [h.tolist() for h in amap.heads],
                    "alignment": list(amap.alignment)}
        return _error(rid, "bad_request", f"unknown request type {msg_type!r}")
    except UnsupportedCapabilityError as exc:
        return _error(rid, "unsupported_capability", str(exc))
    except (KeyError, TypeError, ValueError) as exc:
        return _error(rid, "bad_request", f"{type(exc).__name__}: {exc}")
    except Exception as exc:
        return _error(rid, "internal", f"{type(exc).__name__}: {exc}")


def serve_stdio(model: ModelHandle, infile=None, outfile=None) -> None:
    infile = infile or sys.stdin
    outfile = outfile or sys.stdout
    for line in infile:
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            reply = _error(None, "bad_request", f"invalid JSON: {exc.msg}")
        else:
            reply = handle_message(model, obj)
        outfile.write(json.dumps(reply) + "\n")
        outfile.flush()


def make_http_server(model: ModelHandle, port: int) -> HTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length).decode("utf-8")
            try:
                obj = json.loads(body) if body else {}
            except json.JSONDecodeError as exc:
                reply = _error(None, "bad_request", f"invalid JSON: {exc.msg}")
            else:
                # the path names the type; trust the body's type when present
                obj.setdefault("type", self.path.rsplit("/", 1)[-1])
                reply = handle_message(model, obj)
            payload = json.dumps(reply).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):  # keep stdout/stderr quiet and deterministic
            pass

    return HTTPServer(("127.0.0.1", port), Handler)


def serve_http(model: ModelHandle, port: int) -> None:
    make_http_server(model, port).serve_forever()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="serve a builtin model over the adapter protocol")
    parser.add_argument("--config", required=True, help="models JSON file (from the synth command)")
    parser.add_argument("--model", default="linear", choices=["linear", "attention"])
    parser.add_argument("--http", type=int, default=None, help="serve HTTP on this port instead of stdio")
    args = parser.parse_args(argv)
    with open(args.config, encoding="utf-8") as fh:
        configs = json.load(fh)
    cfg = configs[args.model] if args.model in configs else configs
    model = model_from_config(cfg)
    if args.http is not None:
        serve_http(model, args.http)
    else:
        serve_stdio(model)
    return 0


if __name__ == "__main__":
    sys.exit(main())
