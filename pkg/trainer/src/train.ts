/**
 * Training loop: minimize the mean squared error between the dataset's
 * closing-moment gradient and the model's sum_i N_i dx w_i, where the
 * coefficients N come either from the eigenvalue head through the exact
 * hyperbolic pipeline (head "eigen") or directly from the network (head
 * "coeff", the non-hyperbolic baseline).
 *
 * One optimizer iteration per mini-batch; the one-cycle schedule advances
 * per iteration.  All randomness flows from the config seed.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { readDataset } from "./bgkd.js";
import {
  coeffsBackward,
  coeffsFromRaw,
  hermiteRoots,
  PipelineCache,
  softplusInv,
} from "./closure.js";
import { FlatSamples, featureStats, splitByRecord, standardize, Standardization } from "./data.js";
import { serializeWeights } from "./mlcw.js";
import {
  backward,
  buildNetwork,
  forward,
  forwardTrain,
  gradientArrays,
  Network,
  parameterArrays,
} from "./network.js";
import { AdamW, lrrtSchedule, OneCycle } from "./optim.js";
import { Rng } from "./rng.js";

export interface TrainConfig {
  datasets: string[];
  out: string;
  report?: string;
  epochs: number;
  batchSize: number;
  maxLr: number;
  weightDecay: number;
  hiddenLayers: number;
  width: number;
  epsGap: number;
  seed: number;
  head: "eigen" | "coeff";
  splitFraction: number;
  subsampleEvery: number;
}

export const DEFAULT_CONFIG: Omit<TrainConfig, "datasets" | "out"> = {
  epochs: 500,
  batchSize: 256,
  maxLr: 3e-3,
  weightDecay: 1e-4,
  hiddenLayers: 9,
  width: 128,
  epsGap: 1e-6,
  seed: 0,
  head: "eigen",
  splitFraction: 0.8,
  subsampleEvery: 1,
};

export interface EpochReport {
  epoch: number;
  lr: number;
  trainLoss: number;
  testLoss: number;
  testRelL2: number;
}

export interface TrainResult {
  net: Network;
  stats: Standardization;
  reports: EpochReport[];
  bytes: Uint8Array;
}

interface BatchEval {
  loss: number;
  /** d loss / d raw for every sample in the batch, or null in eval mode. */
  dRaw: Float64Array | null;
}

function evalHead(
  raw: Float64Array,
  samples: FlatSamples,
  indices: Int32Array | null,
  cfg: TrainConfig,
  wantGrad: boolean,
  residualsOut?: Float64Array
): BatchEval {
  const order = samples.order;
  const m1 = order + 1;
  const n = indices ? indices.length : samples.count;
  const dRaw = wantGrad ? new Float64Array(n * m1) : null;
  let loss = 0;
  const rawRow = new Float64Array(m1);
  const dN = new Float64Array(m1);
  for (let i = 0; i < n; i++) {
    const s = indices ? indices[i] : i;
    for (let k = 0; k < m1; k++) rawRow[k] = raw[i * m1 + k];
    let pred = 0;
    let cache: PipelineCache | null = null;
    let N: Float64Array;
    if (cfg.head === "eigen") {
      const res = coeffsFromRaw(rawRow, samples.states[s], cfg.epsGap);
      N = res.N;
      cache = res.cache;
    } else {
      N = rawRow;
    }
    const go = s * m1;
    for (let k = 0; k < m1; k++) pred += N[k] * samples.grads[go + k];
    const residual = pred - samples.target[s];
    if (residualsOut) residualsOut[i] = residual;
    loss += residual * residual;
    if (wantGrad && dRaw) {
      const scale = (2 * residual) / n;
      for (let k = 0; k < m1; k++) dN[k] = scale * samples.grads[go + k];
      if (cfg.head === "eigen") {
        const g = coeffsBackward(cache!, dN);
        for (let k = 0; k < m1; k++) dRaw[i * m1 + k] = g[k];
      } else {
        for (let k = 0; k < m1; k++) dRaw[i * m1 + k] = dN[k];
      }
    }
  }
  return { loss: loss / n, dRaw };
}

export function evaluate(
  net: Network,
  samples: FlatSamples,
  stats: Standardization,
  cfg: TrainConfig
): { loss: number; relL2: number } {
  const X = standardize(samples, stats);
  const raw = forward(net, X, samples.count);
  const residuals = new Float64Array(samples.count);
  const { loss } = evalHead(raw, samples, null, cfg, false, residuals);
  let num = 0;
  let den = 0;
  for (let i = 0; i < samples.count; i++) {
    num += residuals[i] * residuals[i];
    den += samples.target[i] * samples.target[i];
  }
  return { loss, relL2: Math.sqrt(num / Math.max(den, 1e-300)) };
}

/** Head bias that reproduces the equilibrium spectrum at temperature thetaBar. */
export function equilibriumHeadBias(order: number, thetaBar: number, epsGap: number): Float64Array {
  const roots = hermiteRoots(order + 1);
  const s = Math.sqrt(thetaBar);
  const bias = new Float64Array(order + 1);
  bias[0] = s * roots[0];
  for (let k = 1; k <= order; k++) {
    bias[k] = softplusInv(s * (roots[k] - roots[k - 1]) - epsGap);
  }
  return bias;
}

function meanTheta(samples: FlatSamples): number {
  let acc = 0;
  for (let s = 0; s < samples.count; s++) acc += samples.features[s * samples.order + 1];
  return acc / samples.count;
}

export function loadSamples(cfg: TrainConfig): { train: FlatSamples; test: FlatSamples } {
  const rng = new Rng(cfg.seed ^ 0x5eed);
  let train: FlatSamples | null = null;
  let test: FlatSamples | null = null;
  for (const p of cfg.datasets) {
    const ds = readDataset(new Uint8Array(fs.readFileSync(p)));
    const split = splitByRecord(ds, cfg.splitFraction, rng, cfg.subsampleEvery);
    if (!train) {
      train = split.train;
      test = split.test;
    } else {
      train = concatSamples(train, split.train);
      test = concatSamples(test!, split.test);
    }
  }
  if (!train || !test) throw new Error("no datasets given");
  return { train, test };
}

function concatSamples(a: FlatSamples, b: FlatSamples): FlatSamples {
  if (a.order !== b.order) throw new Error("dataset order mismatch");
  const order = a.order;
  const features = new Float64Array((a.count + b.count) * order);
  features.set(a.features.subarray(0, a.count * order));
  features.set(b.features.subarray(0, b.count * order), a.count * order);
  const grads = new Float64Array((a.count + b.count) * (order + 1));
  grads.set(a.grads.subarray(0, a.count * (order + 1)));
  grads.set(b.grads.subarray(0, b.count * (order + 1)), a.count * (order + 1));
  const target = new Float64Array(a.count + b.count);
  target.set(a.target.subarray(0, a.count));
  target.set(b.target.subarray(0, b.count), a.count);
  const states = new Array(a.count + b.count);
  for (let s = 0; s < a.count + b.count; s++) {
    const fo = s * order;
    states[s] = { rho: features[fo], theta: features[fo + 1], f: features.subarray(fo + 2, fo + order) };
  }
  return { order, count: a.count + b.count, features, grads, target, states };
}

export function train(cfg: TrainConfig): TrainResult {
  const { train: trainSamples, test: testSamples } = loadSamples(cfg);
  const order = trainSamples.order;
  const m1 = order + 1;
  const stats = featureStats(trainSamples);
  const rng = new Rng(cfg.seed);

  const headBias =
    cfg.head === "eigen"
      ? equilibriumHeadBias(order, meanTheta(trainSamples), cfg.epsGap)
      : undefined;
  const net = buildNetwork(order, cfg.hiddenLayers, cfg.width, m1, rng, headBias);

  const params = parameterArrays(net);
  // decay only the weight matrices, never biases or norm parameters
  const noDecay = new Set<number>();
  let pi = 0;
  for (const layer of net.layers) {
    pi++; // W: decayed
    noDecay.add(pi++); // b
    if (layer.norm) {
      noDecay.add(pi++); // gamma
      noDecay.add(pi++); // beta
    }
  }

  const X = standardize(trainSamples, stats);
  const n = trainSamples.count;
  const nFeat = order;
  const itersPerEpoch = Math.max(1, Math.floor(n / cfg.batchSize));
  const schedule = new OneCycle(cfg.maxLr, cfg.epochs * itersPerEpoch);
  const opt = new AdamW(params, { lr: cfg.maxLr, weightDecay: cfg.weightDecay, noDecay });

  const perm = new Int32Array(n);
  for (let i = 0; i < n; i++) perm[i] = i;
  const reports: EpochReport[] = [];
  let iter = 0;
  const batchX = new Float64Array(cfg.batchSize * nFeat);
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    rng.shuffle(perm);
    let epochLoss = 0;
    for (let it = 0; it < itersPerEpoch; it++) {
      const idx = perm.subarray(it * cfg.batchSize, (it + 1) * cfg.batchSize);
      const nb = idx.length;
      for (let i = 0; i < nb; i++) {
        batchX.set(X.subarray(idx[i] * nFeat, (idx[i] + 1) * nFeat), i * nFeat);
      }
      const { out: raw, caches } = forwardTrain(net, batchX.subarray(0, nb * nFeat), nb);
      const { loss, dRaw } = evalHead(raw, trainSamples, idx, cfg, true);
      if (!Number.isFinite(loss)) {
        throw new Error(`non-finite loss at epoch ${epoch}, iteration ${it}`);
      }
      epochLoss += loss;
      const grads = backward(net, caches, dRaw!, nb);
      opt.lr = schedule.lrAt(iter++);
      opt.step(gradientArrays(grads));
    }
    const testEval = evaluate(net, testSamples, stats, cfg);
    reports.push({
      epoch,
      lr: opt.lr,
      trainLoss: epochLoss / itersPerEpoch,
      testLoss: testEval.loss,
      testRelL2: testEval.relL2,
    });
  }

  const goldenInputs: Float64Array[] = [];
  const step = Math.max(1, Math.floor(testSamples.count / 10));
  for (let i = 0; i < testSamples.count && goldenInputs.length < 10; i += step) {
    goldenInputs.push(Float64Array.from(testSamples.features.subarray(i * nFeat, (i + 1) * nFeat)));
  }
  const bytes = serializeWeights(
    net,
    { order, epsGap: cfg.epsGap, featureMeans: stats.means, featureScales: stats.scales },
    goldenInputs
  );
  fs.mkdirSync(path.dirname(path.resolve(cfg.out)), { recursive: true });
  fs.writeFileSync(cfg.out, bytes);
  if (cfg.report) {
    fs.mkdirSync(path.dirname(path.resolve(cfg.report)), { recursive: true });
    fs.writeFileSync(cfg.report, reports.map((r) => JSON.stringify(r)).join("\n") + "\n");
  }
  return { net, stats, reports, bytes };
}

export interface LrrtResult {
  lrs: number[];
  losses: number[];
  diverged: boolean;
}

/** Learning-rate range test over one sweep of mini-batches. */
export function lrrt(cfg: TrainConfig, lo: number, hi: number, steps: number): LrrtResult {
  const { train: trainSamples } = loadSamples(cfg);
  const order = trainSamples.order;
  const stats = featureStats(trainSamples);
  const rng = new Rng(cfg.seed);
  const headBias =
    cfg.head === "eigen"
      ? equilibriumHeadBias(order, meanTheta(trainSamples), cfg.epsGap)
      : undefined;
  const net = buildNetwork(order, cfg.hiddenLayers, cfg.width, order + 1, rng, headBias);
  const params = parameterArrays(net);
  const opt = new AdamW(params, { lr: lo, weightDecay: cfg.weightDecay });
  const lrs = lrrtSchedule(lo, hi, steps);
  const X = standardize(trainSamples, stats);
  const n = trainSamples.count;
  const nFeat = order;
  const perm = new Int32Array(n);
  for (let i = 0; i < n; i++) perm[i] = i;
  rng.shuffle(perm);
  const out: LrrtResult = { lrs: [], losses: [], diverged: false };
  let best = Infinity;
  const batchX = new Float64Array(cfg.batchSize * nFeat);
  for (let it = 0; it < steps; it++) {
    const start = (it * cfg.batchSize) % Math.max(n - cfg.batchSize, 1);
    const idx = perm.subarray(start, start + cfg.batchSize);
    const nb = idx.length;
    for (let i = 0; i < nb; i++) {
      batchX.set(X.subarray(idx[i] * nFeat, (idx[i] + 1) * nFeat), i * nFeat);
    }
    const { out: raw, caches } = forwardTrain(net, batchX.subarray(0, nb * nFeat), nb);
    const { loss, dRaw } = evalHead(raw, trainSamples, idx, cfg, true);
    out.lrs.push(lrs[it]);
    out.losses.push(loss);
    if (!Number.isFinite(loss) || loss > 4 * best) {
      out.diverged = true;
      break;
    }
    best = Math.min(best, loss);
    const grads = backward(net, caches, dRaw!, nb);
    opt.lr = lrs[it];
    opt.step(gradientArrays(grads));
  }
  return out;
}
