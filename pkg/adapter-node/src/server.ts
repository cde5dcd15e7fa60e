/**
 * Transports: newline-delimited JSON over stdio, or the same bodies POSTed
 * to /v1/<type> over HTTP.
 *
 * The stdio server answers one line per request, in arrival order by default.
 * With a shuffle window of N it buffers N requests and answers them in
 * reverse arrival order: a test knob for exercising engine-side out-of-order
 * reply matching (pipelined clients only; serial callers would stall).
 */

import * as http from "node:http";
import * as readline from "node:readline";
import { LinearBowClassifier } from "./classifier.js";
import { Reply, Request, handleMessage } from "./protocol.js";

export function serveStdio(model: LinearBowClassifier, shuffleWindow = 0): void {
  const pending: Request[] = [];

  const reply = (obj: Reply) => {
    process.stdout.write(JSON.stringify(obj) + "\n");
  };

  const flushPending = () => {
    for (const buffered of pending.reverse()) {
      reply(handleMessage(model, buffered));
    }
    pending.length = 0;
  };

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    const trimmed = line.trim();
    if (!trimmed) return;
    let req: Request;
    try {
      req = JSON.parse(trimmed) as Request;
    } catch (exc) {
      reply({ type: "error", id: null, code: "bad_request",
              message: `invalid JSON: ${(exc as Error).message}` });
      return;
    }
    // the handshake always answers immediately so serial clients can connect
    if (shuffleWindow > 1 && req.type !== "hello?") {
      pending.push(req);
      if (pending.length >= shuffleWindow) flushPending();
      return;
    }
    reply(handleMessage(model, req));
  });
  rl.on("close", flushPending);
}

export function makeHttpServer(model: LinearBowClassifier): http.Server {
  return http.createServer((req, res) => {
    const chunks: Buffer[] = [];
    req.on("data", (chunk) => chunks.push(chunk));
    req.on("end", () => {
      let reply: Reply;
      try {
        const body = Buffer.concat(chunks).toString("utf-8");
        const obj = (body ? JSON.parse(body) : {}) as Request;
        if (!obj.type) {
          // the path names the type when the body omits it
          obj.type = (req.url ?? "").split("/").pop() ?? "";
        }
        reply = handleMessage(model, obj);
      } catch (exc) {
        reply = { type: "error", id: null, code: "bad_request",
                  message: `invalid JSON: ${(exc as Error).message}` };
      }
      const payload = JSON.stringify(reply);
      res.writeHead(200, {
        "Content-Type": "application/json",
        "Content-Length": Buffer.byteLength(payload),
      });
      res.end(payload);
    });
  });
}
