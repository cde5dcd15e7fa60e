import { describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as path from "node:path";
import * as url from "node:url";
import { LinearBowClassifier } from "../src/classifier.js";

const HERE = path.dirname(url.fileURLToPath(import.meta.url));
const bundled = JSON.parse(
  fs.readFileSync(path.join(HERE, "..", "models", "default.json"), "utf-8"),
);

describe("LinearBowClassifier", () => {
  const model = new LinearBowClassifier(bundled);

  it("produces a probability distribution", () => {
    const probs = model.probs(["the", "claim", "supports", "evidence"]);
    expect(probs).toHaveLength(2);
    expect(probs.every((p) => p >= 0)).toBe(true);
    expect(probs.reduce((a, b) => a + b, 0)).toBeCloseTo(1.0, 12);
  });

  it("matches a hand-computed softmax", () => {
    // logits = bias + w(certain) = [0.25 - 0.8, -0.25 + 0.9]
    const probs = model.probs(["certain"]);
    const z = [-0.55, 0.65];
    const denom = Math.exp(z[0]) + Math.exp(z[1]);
    expect(probs[0]).toBeCloseTo(Math.exp(z[0]) / denom, 12);
    expect(probs[1]).toBeCloseTo(Math.exp(z[1]) / denom, 12);
  });

  it("is deterministic", () => {
    const once = model.probs(["likely", "evidence"]);
    const twice = model.probs(["likely", "evidence"]);
    expect(once).toEqual(twice);
  });

  it("treats mask and unknown tokens as zero rows", () => {
    const masked = model.probs(["[MASK]", "certain"]);
    const unknown = model.probs(["zzz-not-in-vocab", "certain"]);
    expect(masked).toEqual(unknown);
    expect(masked).toEqual(model.probs(["certain", "[MASK]"]));
  });

  it("grad_dot is the per-token logit difference, alpha-independent", () => {
    const tokens = ["certain", "never"];
    const baseline = ["[MASK]", "[MASK]"];
    const atZero = model.gradDot(tokens, baseline, 0.0, 1);
    const atHalf = model.gradDot(tokens, baseline, 0.5, 1);
    expect(atZero).toEqual(atHalf);
    expect(atZero[0]).toBeCloseTo(0.9, 12);
    expect(atZero[1]).toBeCloseTo(-0.85, 12);
  });

  it("rejects mismatched baseline lengths", () => {
    expect(() => model.gradDot(["a"], ["a", "b"], 0.5, 0)).toThrow();
  });

  it("rejects an out-of-range target class", () => {
    expect(() => model.gradDot(["a"], ["a"], 0.5, 7)).toThrow();
  });
});
