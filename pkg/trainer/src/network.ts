/**
 * Dense network with per-layer batch normalization: linear -> norm -> ReLU
 * blocks and a linear head.  Training mode normalizes with batch statistics
 * and tracks running estimates; exported weights freeze the running
 * statistics, so inference is deterministic.
 *
 * Everything is Float64Array in row-major (sample, feature) layout; the
 * backward pass is hand-written (no autograd).
 */

import { Rng } from "./rng.js";

export interface NormState {
  gamma: Float64Array;
  beta: Float64Array;
  runMean: Float64Array;
  runVar: Float64Array;
  eps: number;
}

export interface Layer {
  inDim: number;
  outDim: number;
  W: Float64Array; // (out, in) row-major
  b: Float64Array;
  norm: NormState | null;
  activation: "relu" | "identity";
}

export interface Network {
  layers: Layer[];
}

export interface LayerGrads {
  dW: Float64Array;
  db: Float64Array;
  dGamma: Float64Array | null;
  dBeta: Float64Array | null;
}

interface LayerCache {
  x: Float64Array; // layer input
  lin: Float64Array; // W x + b
  xhat: Float64Array | null; // normalized pre-activation
  mean: Float64Array | null;
  varr: Float64Array | null;
  act: Float64Array; // layer output
}

const NORM_MOMENTUM = 0.1;

export function buildNetwork(
  nIn: number,
  hidden: number,
  width: number,
  nOut: number,
  rng: Rng,
  headBias?: Float64Array
): Network {
  const layers: Layer[] = [];
  let d = nIn;
  for (let l = 0; l < hidden; l++) {
    const W = new Float64Array(width * d);
    const scale = Math.sqrt(2 / d); // He init for ReLU blocks
    for (let i = 0; i < W.length; i++) W[i] = scale * rng.normal();
    layers.push({
      inDim: d,
      outDim: width,
      W,
      b: new Float64Array(width),
      norm: {
        gamma: new Float64Array(width).fill(1),
        beta: new Float64Array(width),
        runMean: new Float64Array(width),
        runVar: new Float64Array(width).fill(1),
        eps: 1e-5,
      },
      activation: "relu",
    });
    d = width;
  }
  const W = new Float64Array(nOut * d);
  const scale = 0.01 / Math.sqrt(d); // small head: start near the bias seed
  for (let i = 0; i < W.length; i++) W[i] = scale * rng.normal();
  const b = new Float64Array(nOut);
  if (headBias) b.set(headBias);
  layers.push({ inDim: d, outDim: nOut, W, b, norm: null, activation: "identity" });
  return { layers };
}

function linearForward(layer: Layer, x: Float64Array, n: number): Float64Array {
  const { inDim, outDim, W, b } = layer;
  const out = new Float64Array(n * outDim);
  for (let s = 0; s < n; s++) {
    const xo = s * inDim;
    const yo = s * outDim;
    for (let o = 0; o < outDim; o++) {
      let acc = b[o];
      const wo = o * inDim;
      for (let i = 0; i < inDim; i++) acc += W[wo + i] * x[xo + i];
      out[yo + o] = acc;
    }
  }
  return out;
}

/** Inference pass with frozen running statistics. */
export function forward(net: Network, x: Float64Array, n: number): Float64Array {
  let cur = x;
  for (const layer of net.layers) {
    let y = linearForward(layer, cur, n);
    if (layer.norm) {
      const { gamma, beta, runMean, runVar, eps } = layer.norm;
      const d = layer.outDim;
      for (let s = 0; s < n; s++) {
        for (let o = 0; o < d; o++) {
          const idx = s * d + o;
          y[idx] = (gamma[o] * (y[idx] - runMean[o])) / Math.sqrt(runVar[o] + eps) + beta[o];
        }
      }
    }
    if (layer.activation === "relu") {
      for (let i = 0; i < y.length; i++) if (y[i] < 0) y[i] = 0;
    }
    cur = y;
  }
  return cur;
}

/** Training pass: batch statistics, running-stat update, caches for backward. */
export function forwardTrain(
  net: Network,
  x: Float64Array,
  n: number
): { out: Float64Array; caches: LayerCache[] } {
  let cur = x;
  const caches: LayerCache[] = [];
  for (const layer of net.layers) {
    const d = layer.outDim;
    const lin = linearForward(layer, cur, n);
    let pre = lin;
    let xhat: Float64Array | null = null;
    let mean: Float64Array | null = null;
    let varr: Float64Array | null = null;
    if (layer.norm) {
      mean = new Float64Array(d);
      varr = new Float64Array(d);
      for (let s = 0; s < n; s++) {
        for (let o = 0; o < d; o++) mean[o] += lin[s * d + o];
      }
      for (let o = 0; o < d; o++) mean[o] /= n;
      for (let s = 0; s < n; s++) {
        for (let o = 0; o < d; o++) {
          const diff = lin[s * d + o] - mean[o];
          varr[o] += diff * diff;
        }
      }
      for (let o = 0; o < d; o++) varr[o] /= n;
      const { gamma, beta, runMean, runVar, eps } = layer.norm;
      xhat = new Float64Array(n * d);
      pre = new Float64Array(n * d);
      for (let s = 0; s < n; s++) {
        for (let o = 0; o < d; o++) {
          const idx = s * d + o;
          const xh = (lin[idx] - mean[o]) / Math.sqrt(varr[o] + eps);
          xhat[idx] = xh;
          pre[idx] = gamma[o] * xh + beta[o];
        }
      }
      for (let o = 0; o < d; o++) {
        runMean[o] = (1 - NORM_MOMENTUM) * runMean[o] + NORM_MOMENTUM * mean[o];
        runVar[o] = (1 - NORM_MOMENTUM) * runVar[o] + NORM_MOMENTUM * varr[o];
      }
    }
    let act = pre;
    if (layer.activation === "relu") {
      act = new Float64Array(pre.length);
      for (let i = 0; i < pre.length; i++) act[i] = pre[i] > 0 ? pre[i] : 0;
    }
    caches.push({ x: cur, lin, xhat, mean, varr, act });
    cur = act;
  }
  return { out: cur, caches };
}

/** Backward pass through the cached training forward; returns per-layer grads. */
export function backward(
  net: Network,
  caches: LayerCache[],
  dOut: Float64Array,
  n: number
): LayerGrads[] {
  const grads: LayerGrads[] = net.layers.map((l) => ({
    dW: new Float64Array(l.W.length),
    db: new Float64Array(l.b.length),
    dGamma: l.norm ? new Float64Array(l.outDim) : null,
    dBeta: l.norm ? new Float64Array(l.outDim) : null,
  }));
  let grad = dOut;
  for (let li = net.layers.length - 1; li >= 0; li--) {
    const layer = net.layers[li];
    const cache = caches[li];
    const d = layer.outDim;
    let g = grad;
    if (layer.activation === "relu") {
      const masked = new Float64Array(g.length);
      for (let i = 0; i < g.length; i++) masked[i] = cache.act[i] > 0 ? g[i] : 0;
      g = masked;
    }
    if (layer.norm) {
      const { gamma, eps } = layer.norm;
      const xhat = cache.xhat!;
      const varr = cache.varr!;
      const gl = grads[li];
      const sumDy = new Float64Array(d);
      const sumDyXhat = new Float64Array(d);
      for (let s = 0; s < n; s++) {
        for (let o = 0; o < d; o++) {
          const idx = s * d + o;
          sumDy[o] += g[idx];
          sumDyXhat[o] += g[idx] * xhat[idx];
        }
      }
      gl.dBeta!.set(sumDy);
      gl.dGamma!.set(sumDyXhat);
      const dlin = new Float64Array(n * d);
      for (let s = 0; s < n; s++) {
        for (let o = 0; o < d; o++) {
          const idx = s * d + o;
          const invStd = 1 / Math.sqrt(varr[o] + eps);
          dlin[idx] =
            ((gamma[o] * invStd) / n) * (n * g[idx] - sumDy[o] - xhat[idx] * sumDyXhat[o]);
        }
      }
      g = dlin;
    }
    const gl = grads[li];
    const { inDim, W } = layer;
    const x = cache.x;
    for (let s = 0; s < n; s++) {
      const xo = s * inDim;
      const go = s * d;
      for (let o = 0; o < d; o++) {
        const gv = g[go + o];
        if (gv === 0) continue;
        gl.db[o] += gv;
        const wo = o * inDim;
        for (let i = 0; i < inDim; i++) gl.dW[wo + i] += gv * x[xo + i];
      }
    }
    if (li > 0) {
      const dx = new Float64Array(n * inDim);
      for (let s = 0; s < n; s++) {
        const xo = s * inDim;
        const go = s * d;
        for (let o = 0; o < d; o++) {
          const gv = g[go + o];
          if (gv === 0) continue;
          const wo = o * inDim;
          for (let i = 0; i < inDim; i++) dx[xo + i] += gv * W[wo + i];
        }
      }
      grad = dx;
    }
  }
  return grads;
}

export function parameterArrays(net: Network): Float64Array[] {
  const out: Float64Array[] = [];
  for (const layer of net.layers) {
    out.push(layer.W, layer.b);
    if (layer.norm) out.push(layer.norm.gamma, layer.norm.beta);
  }
  return out;
}

export function gradientArrays(grads: LayerGrads[]): Float64Array[] {
  const out: Float64Array[] = [];
  for (const g of grads) {
    out.push(g.dW, g.db);
    if (g.dGamma) out.push(g.dGamma, g.dBeta!);
  }
  return out;
}
