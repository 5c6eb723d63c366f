/**
 * Optimizer and learning-rate policies.
 *
 * AdamW decouples the weight decay from the adaptive moment estimates: the
 * decay shrinks parameters directly instead of being folded into the
 * gradient, which is not equivalent for adaptive methods and trains this
 * model family measurably better than the L2-in-gradient variant.
 */

export interface AdamWOptions {
  lr: number;
  beta1?: number;
  beta2?: number;
  eps?: number;
  weightDecay?: number;
  /** Parameter groups excluded from decay (biases, norm scales/shifts). */
  noDecay?: Set<number>;
}

export class AdamW {
  lr: number;
  private readonly beta1: number;
  private readonly beta2: number;
  private readonly eps: number;
  private readonly weightDecay: number;
  private readonly noDecay: Set<number>;
  private readonly m: Float64Array[];
  private readonly v: Float64Array[];
  private t = 0;

  constructor(private params: Float64Array[], opts: AdamWOptions) {
    this.lr = opts.lr;
    this.beta1 = opts.beta1 ?? 0.9;
    this.beta2 = opts.beta2 ?? 0.999;
    this.eps = opts.eps ?? 1e-8;
    this.weightDecay = opts.weightDecay ?? 0;
    this.noDecay = opts.noDecay ?? new Set();
    this.m = params.map((p) => new Float64Array(p.length));
    this.v = params.map((p) => new Float64Array(p.length));
  }

  step(grads: Float64Array[]): void {
    this.t++;
    const bc1 = 1 - this.beta1 ** this.t;
    const bc2 = 1 - this.beta2 ** this.t;
    for (let gi = 0; gi < this.params.length; gi++) {
      const p = this.params[gi];
      const g = grads[gi];
      const m = this.m[gi];
      const v = this.v[gi];
      const decay = this.noDecay.has(gi) ? 0 : this.weightDecay;
      for (let i = 0; i < p.length; i++) {
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g[i];
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g[i] * g[i];
        const mhat = m[i] / bc1;
        const vhat = v[i] / bc2;
        p[i] -= this.lr * (mhat / (Math.sqrt(vhat) + this.eps) + decay * p[i]);
      }
    }
  }
}

/**
 * One-cycle schedule, advanced once per optimizer iteration: cosine ramp
 * from maxLr/divStart up to maxLr over the warm-up fraction, then cosine
 * anneal down to maxLr/divFinal.
 */
export class OneCycle {
  constructor(
    private readonly maxLr: number,
    private readonly totalSteps: number,
    private readonly warmupFraction = 0.3,
    private readonly divStart = 25,
    private readonly divFinal = 1e4
  ) {}

  lrAt(step: number): number {
    const t = Math.min(step / Math.max(this.totalSteps - 1, 1), 1);
    const lo = this.maxLr / this.divStart;
    const end = this.maxLr / this.divFinal;
    if (t < this.warmupFraction) {
      const s = t / this.warmupFraction;
      return lo + (this.maxLr - lo) * 0.5 * (1 - Math.cos(Math.PI * s));
    }
    const s = (t - this.warmupFraction) / (1 - this.warmupFraction);
    return end + (this.maxLr - end) * 0.5 * (1 + Math.cos(Math.PI * s));
  }
}

export interface LrrtPoint {
  lr: number;
  loss: number;
}

/**
 * Learning-rate range test: sweep the rate geometrically once per iteration
 * and record the loss.  The sweep truncates (and flags) when the loss blows
 * past a multiple of the best seen, which marks the divergence region.
 */
export function lrrtSchedule(lo: number, hi: number, steps: number): Float64Array {
  const out = new Float64Array(steps);
  if (lo <= 0 || hi <= lo) {
    out.fill(lo);
    return out;
  }
  const ratio = Math.log(hi / lo);
  for (let i = 0; i < steps; i++) {
    out[i] = lo * Math.exp((ratio * i) / Math.max(steps - 1, 1));
  }
  return out;
}
