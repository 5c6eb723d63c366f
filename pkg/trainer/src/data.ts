/**
 * Flattening of trajectory datasets into training samples.
 *
 * A sample is one (initial condition, time, cell) triple carrying the
 * network features (rho, theta, f_3 .. f_M) — the bulk velocity is
 * deliberately excluded so the learned closure is Galilean invariant by
 * construction — together with the full primitive-gradient vector and the
 * closing-moment gradient target.
 */

import { Dataset } from "./bgkd.js";
import { SampleState } from "./closure.js";
import { Rng } from "./rng.js";

export interface FlatSamples {
  order: number;
  count: number;
  /** (count, M) raw features. */
  features: Float64Array;
  /** (count, M+1) primitive gradients dx(rho, u, theta, f_3 .. f_M). */
  grads: Float64Array;
  /** (count,) target dx f_{M+1}. */
  target: Float64Array;
  /** per-sample state for the closure algebra (views into features). */
  states: SampleState[];
}

export interface SplitSamples {
  train: FlatSamples;
  test: FlatSamples;
}

export function flatten(ds: Dataset, recordIdx: number[], subsampleEvery = 1): FlatSamples {
  const order = ds.order;
  const nFeat = order;
  const rows = order + 2;
  const nc = ds.nCells;
  let count = 0;
  for (const ri of recordIdx) {
    const nt = ds.records[ri].times.length;
    count += Math.ceil(nt / subsampleEvery) * nc;
  }
  const features = new Float64Array(count * nFeat);
  const grads = new Float64Array(count * (order + 1));
  const target = new Float64Array(count);
  const states: SampleState[] = new Array(count);
  let s = 0;
  for (const ri of recordIdx) {
    const rec = ds.records[ri];
    const nt = rec.times.length;
    for (let t = 0; t < nt; t += subsampleEvery) {
      const vOff = t * rows * nc;
      for (let c = 0; c < nc; c++) {
        const fo = s * nFeat;
        features[fo] = rec.values[vOff + 0 * nc + c]; // rho
        features[fo + 1] = rec.values[vOff + 2 * nc + c]; // theta
        for (let k = 3; k <= order; k++) {
          features[fo + k - 1] = rec.values[vOff + k * nc + c];
        }
        const go = s * (order + 1);
        for (let k = 0; k <= order; k++) {
          grads[go + k] = rec.gradients[vOff + k * nc + c];
        }
        target[s] = rec.gradients[vOff + (order + 1) * nc + c];
        states[s] = {
          rho: features[fo],
          theta: features[fo + 1],
          f: features.subarray(fo + 2, fo + nFeat),
        };
        s++;
      }
    }
  }
  return { order, count: s, features, grads, target, states };
}

/** Split the dataset by initial condition (held-out trajectories). */
export function splitByRecord(
  ds: Dataset,
  trainFraction: number,
  rng: Rng,
  subsampleEvery = 1
): SplitSamples {
  const idx = new Int32Array(ds.records.length);
  for (let i = 0; i < idx.length; i++) idx[i] = i;
  rng.shuffle(idx);
  const nTrain = Math.max(1, Math.min(idx.length - 1, Math.round(trainFraction * idx.length)));
  const trainIdx = Array.from(idx.subarray(0, nTrain));
  const testIdx = Array.from(idx.subarray(nTrain));
  return {
    train: flatten(ds, trainIdx, subsampleEvery),
    test: flatten(ds, testIdx, subsampleEvery),
  };
}

export interface Standardization {
  means: Float64Array;
  scales: Float64Array;
}

export function featureStats(samples: FlatSamples): Standardization {
  const nFeat = samples.order;
  const means = new Float64Array(nFeat);
  const scales = new Float64Array(nFeat);
  for (let s = 0; s < samples.count; s++) {
    for (let j = 0; j < nFeat; j++) means[j] += samples.features[s * nFeat + j];
  }
  for (let j = 0; j < nFeat; j++) means[j] /= samples.count;
  for (let s = 0; s < samples.count; s++) {
    for (let j = 0; j < nFeat; j++) {
      const d = samples.features[s * nFeat + j] - means[j];
      scales[j] += d * d;
    }
  }
  for (let j = 0; j < nFeat; j++) {
    scales[j] = Math.sqrt(scales[j] / Math.max(samples.count - 1, 1));
    if (scales[j] < 1e-8) scales[j] = 1.0; // constant feature: leave unscaled
  }
  return { means, scales };
}

export function standardize(
  samples: FlatSamples,
  stats: Standardization,
  indices?: Int32Array
): Float64Array {
  const nFeat = samples.order;
  const n = indices ? indices.length : samples.count;
  const out = new Float64Array(n * nFeat);
  for (let i = 0; i < n; i++) {
    const s = indices ? indices[i] : i;
    for (let j = 0; j < nFeat; j++) {
      out[i * nFeat + j] = (samples.features[s * nFeat + j] - stats.means[j]) / stats.scales[j];
    }
  }
  return out;
}
