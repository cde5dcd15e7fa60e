/**
 * Bundled deterministic classifier: a linear bag-of-words model.
 *
 * logits = bias + sum of per-token class weight rows, accumulated in token
 * order; the mask token and unknown tokens contribute a zero row, so masking
 * a token removes exactly its contribution.  Gradients along an interpolation
 * path are closed-form and independent of the path point (linear map), which
 * is what the grad_dot capability serves.
 */

export interface LinearConfig {
  type?: string;
  mask_token: string;
  bias: number[];
  weights: Record<string, number[]>;
}

export class LinearBowClassifier {
  readonly maskToken: string;
  readonly numClasses: number;
  private readonly bias: number[];
  private readonly weights: Map<string, number[]>;

  constructor(config: LinearConfig) {
    if (!Array.isArray(config.bias) || config.bias.length < 2) {
      throw new Error("classifier config needs a bias row with >= 2 classes");
    }
    this.maskToken = config.mask_token ?? "[MASK]";
    this.bias = config.bias.map(Number);
    this.numClasses = this.bias.length;
    this.weights = new Map();
    for (const [token, row] of Object.entries(config.weights ?? {})) {
      if (row.length !== this.numClasses) {
        throw new Error(`weight row for ${JSON.stringify(token)} has wrong class count`);
      }
      this.weights.set(token, row.map(Number));
    }
    this.weights.set(this.maskToken, new Array(this.numClasses).fill(0));
  }

  private row(token: string): number[] | undefined {
    return this.weights.get(token);
  }

  logits(tokens: string[]): number[] {
    const z = this.bias.slice();
    for (const token of tokens) {
      const row = this.row(token);
      if (row) {
        for (let c = 0; c < z.length; c++) z[c] += row[c];
      }
    }
    return z;
  }

  probs(tokens: string[]): number[] {
    const z = this.logits(tokens);
    const top = Math.max(...z);
    const exps = z.map((v) => Math.exp(v - top));
    const total = exps.reduce((a, b) => a + b, 0);
    return exps.map((e) => e / total);
  }

  /**
   * Directional derivative of the target logit per position: the gradient is
   * constant along the path for a linear map, so alpha is ignored.
   */
  gradDot(tokens: string[], baseline: string[], _alpha: number, target: number): number[] {
    if (tokens.length !== baseline.length) {
      throw new Error("tokens and baseline must have equal length");
    }
    if (!Number.isInteger(target) || target < 0 || target >= this.numClasses) {
      throw new Error(`target class ${target} out of range`);
    }
    const zero = new Array(this.numClasses).fill(0);
    return tokens.map((token, i) => {
      const here = this.row(token) ?? zero;
      const there = this.row(baseline[i]) ?? zero;
      return here[target] - there[target];
    });
  }
}
