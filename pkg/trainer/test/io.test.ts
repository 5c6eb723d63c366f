import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { DatasetFormatError, readDataset } from "../src/bgkd.js";
import { buildNetwork, forward, forwardTrain } from "../src/network.js";
import { parseWeights, serializeWeights } from "../src/mlcw.js";
import { Rng } from "../src/rng.js";

const FIXTURES = path.resolve(__dirname, "fixtures");
const TINY_DATASET = path.join(FIXTURES, "tiny_hme.bgkd");

function generateTinyDataset(): void {
  fs.mkdirSync(FIXTURES, { recursive: true });
  if (fs.existsSync(TINY_DATASET)) return;
  execFileSync(
    "python3",
    [
      "-m", "bgkclosure.cli", "gen-data",
      "--generator", "hme", "--kind", "wave",
      "--n-ic", "3", "--moments", "4", "--nx", "32", "--nv", "64",
      "--t-final", "0.05", "--saves", "4", "--seed", "11",
      "--out", TINY_DATASET,
    ],
    { stdio: "pipe" }
  );
}

describe("BGKD reader", () => {
  beforeAll(generateTinyDataset);

  it("reads a solver-generated dataset", () => {
    const ds = readDataset(new Uint8Array(fs.readFileSync(TINY_DATASET)));
    expect(ds.order).toBe(4);
    expect(ds.nCells).toBe(32);
    expect(ds.generator).toBe("hme");
    expect(ds.records).toHaveLength(3);
    const rec = ds.records[0];
    expect(rec.times).toHaveLength(5);
    expect(rec.values).toHaveLength(5 * 6 * 32);
    for (const v of rec.values) expect(Number.isFinite(v)).toBe(true);
    // density row is positive everywhere
    for (let c = 0; c < 32; c++) expect(rec.values[c]).toBeGreaterThan(0);
  });

  it("carries the analytic closing-moment gradient for hme data", () => {
    const ds = readDataset(new Uint8Array(fs.readFileSync(TINY_DATASET)));
    const rec = ds.records[1];
    const nc = ds.nCells;
    const rows = ds.order + 2;
    for (let t = 0; t < rec.times.length; t++) {
      for (let c = 0; c < nc; c++) {
        const fM = rec.values[t * rows * nc + ds.order * nc + c];
        const fM1 = rec.values[t * rows * nc + (ds.order - 1) * nc + c];
        const du = rec.gradients[t * rows * nc + 1 * nc + c];
        const dth = rec.gradients[t * rows * nc + 2 * nc + c];
        const target = rec.gradients[t * rows * nc + (ds.order + 1) * nc + c];
        expect(target).toBeCloseTo(-fM * du - 0.5 * fM1 * dth, 12);
      }
    }
  });

  it("rejects corruption", () => {
    const buf = new Uint8Array(fs.readFileSync(TINY_DATASET));
    buf[Math.floor(buf.length / 2)] ^= 0xff;
    expect(() => readDataset(buf)).toThrow(DatasetFormatError);
  });
});

describe("MLCW writer", () => {
  it("round-trips through its own parser", () => {
    const rng = new Rng(5);
    const net = buildNetwork(4, 2, 8, 5, rng);
    const config = {
      order: 4,
      epsGap: 1e-6,
      featureMeans: Float64Array.from([1, 1, 0, 0]),
      featureScales: Float64Array.from([0.5, 0.5, 0.1, 0.1]),
    };
    const goldens = [Float64Array.from([1.1, 0.9, 0.02, -0.01])];
    const bytes = serializeWeights(net, config, goldens);
    const loaded = parseWeights(bytes);
    expect(loaded.config.order).toBe(4);
    expect(loaded.net.layers).toHaveLength(3);
    expect(Array.from(loaded.goldenInputs[0])).toEqual(Array.from(goldens[0]));
    const again = serializeWeights(loaded.net, loaded.config, loaded.goldenInputs);
    expect(Buffer.compare(Buffer.from(again), Buffer.from(bytes))).toBe(0);
  });

  it("records golden outputs that match the inference pass", () => {
    const rng = new Rng(9);
    const net = buildNetwork(4, 1, 6, 5, rng);
    const config = {
      order: 4,
      epsGap: 1e-6,
      featureMeans: new Float64Array(4),
      featureScales: Float64Array.from([1, 1, 1, 1]),
    };
    const gin = Float64Array.from([0.8, 1.2, 0.05, -0.03]);
    const loaded = parseWeights(serializeWeights(net, config, [gin]));
    const got = forward(loaded.net, gin, 1); // identity standardization
    for (let i = 0; i < 5; i++) expect(loaded.goldenOutputs[0][i]).toBeCloseTo(got[i], 14);
  });

  it("is loadable by the solver runtime with golden verification at 1e-12", () => {
    const rng = new Rng(13);
    const net = buildNetwork(4, 3, 16, 5, rng);
    // run a few training-style passes so batch-norm statistics are nontrivial
    const x = Float64Array.from({ length: 64 * 4 }, () => rng.normal());
    for (let i = 0; i < 5; i++) forwardTrain(net, x, 64);

    const config = {
      order: 4,
      epsGap: 1e-6,
      featureMeans: Float64Array.from([1.0, 0.9, 0.0, 0.0]),
      featureScales: Float64Array.from([0.3, 0.2, 0.05, 0.05]),
    };
    const goldens = Array.from({ length: 10 }, () =>
      Float64Array.from([1 + 0.3 * rng.normal(), 0.9 + 0.2 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal()])
    );
    const bytes = serializeWeights(net, config, goldens);
    fs.mkdirSync(FIXTURES, { recursive: true });
    const file = path.join(FIXTURES, "cross_check.mlcw");
    fs.writeFileSync(file, bytes);

    // the python loader re-runs the stored golden vectors on load and
    // raises if any output deviates beyond 1e-12
    const script = [
      "import sys, numpy as np",
      "from bgkclosure.ml_closure_runtime import load_weights, forward",
      `weights, config = load_weights(open(${JSON.stringify(file)}, 'rb'))`,
      "std = (weights.golden_inputs - config.feature_means) / config.feature_scales",
      "out = forward(weights, std)",
      "print(repr(float(np.abs(out - weights.golden_outputs).max())))",
    ].join("\n");
    const printed = execFileSync("python3", ["-c", script], { encoding: "utf-8" }).trim();
    expect(Number(printed)).toBeLessThanOrEqual(1e-12);
  });
});
