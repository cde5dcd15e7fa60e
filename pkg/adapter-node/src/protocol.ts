/**
 * Wire protocol dispatcher, transport-agnostic.
 *
 * Requests and replies are JSON objects; every request carries an integer id
 * echoed back.  Unknown request types and calls to undeclared capabilities
 * come back as error replies, never as crashes.
 */

import { LinearBowClassifier } from "./classifier.js";

export const PROTOCOL_VERSION = 1;

export interface Request {
  type: string;
  id?: number | null;
  version?: number;
  tokens?: string[];
  batch?: string[][];
  baseline?: string[];
  alpha?: number;
  target?: number;
}

export interface Reply {
  type: string;
  id?: number | null;
  [key: string]: unknown;
}

function errorReply(id: number | null | undefined, code: string, message: string): Reply {
  return { type: "error", id: id ?? null, code, message };
}

function requireTokens(req: Request): string[] {
  if (!Array.isArray(req.tokens) || req.tokens.some((t) => typeof t !== "string")) {
    throw new Error("field 'tokens' must be a list of strings");
  }
  if (req.tokens.length === 0) {
    throw new Error("field 'tokens' must be non-empty");
  }
  return req.tokens;
}

export function handleMessage(model: LinearBowClassifier, req: Request): Reply {
  const id = req.id ?? null;
  try {
    switch (req.type) {
      case "hello?":
        return {
          type: "hello",
          version: PROTOCOL_VERSION,
          classes: model.numClasses,
          mask_token: model.maskToken,
          capabilities: ["predict", "grad_dot"],
        };
      case "predict":
        return { type: "prediction", id, probs: model.probs(requireTokens(req)) };
      case "predict_batch": {
        if (!Array.isArray(req.batch)) {
          throw new Error("field 'batch' must be a list of token lists");
        }
        const probs = req.batch.map((tokens) => model.probs(tokens));
        return { type: "prediction_batch", id, probs };
      }
      case "grad_dot": {
        const tokens = requireTokens(req);
        if (!Array.isArray(req.baseline)) {
          throw new Error("field 'baseline' must be a list of strings");
        }
        const values = model.gradDot(
          tokens,
          req.baseline,
          Number(req.alpha ?? 0),
          Number(req.target ?? 0),
        );
        return { type: "grad_dot", id, values };
      }
      case "attention":
        return errorReply(id, "unsupported_capability",
          "the bundled classifier declares no attention capability");
      default:
        return errorReply(id, "bad_request", `unknown request type ${JSON.stringify(req.type)}`);
    }
  } catch (exc) {
    return errorReply(id, "bad_request", (exc as Error).message);
  }
}
