/**
 * Writer (and verifying reader) for MLCW weight files consumed by the solver
 * runtime.  Little-endian layout:
 *
 *   magic "MLCW", u32 version=1, u32 M, f64 eps_gap,
 *   u32 n_features + f64 means + f64 scales,
 *   u32 n_layers, per layer: u32 in, u32 out, u8 has_norm, u8 activation
 *   (0 identity | 1 relu), f64 W row-major, f64 b,
 *   [f64 gamma, beta, mean, var, f64 eps_bn],
 *   u32 n_golden + interleaved f64 raw-input/output vectors,
 *   trailing u32 crc32.
 *
 * A layer evaluates linear -> norm (running statistics) -> activation.
 * Golden vectors record raw (unstandardized) feature vectors and the head
 * outputs; every loader re-verifies them, which pins inference parity
 * across implementations to 1e-12.
 */

import { crc32 } from "./crc32.js";
import { forward, Network } from "./network.js";

export interface ExportConfig {
  order: number;
  epsGap: number;
  featureMeans: Float64Array;
  featureScales: Float64Array;
}

class ByteSink {
  private chunks: number[] = [];

  u8(v: number): void {
    this.chunks.push(v & 0xff);
  }

  u32(v: number): void {
    this.chunks.push(v & 0xff, (v >>> 8) & 0xff, (v >>> 16) & 0xff, (v >>> 24) & 0xff);
  }

  f64(v: number): void {
    const buf = new ArrayBuffer(8);
    new DataView(buf).setFloat64(0, v, true);
    const bytes = new Uint8Array(buf);
    for (let i = 0; i < 8; i++) this.chunks.push(bytes[i]);
  }

  f64Array(arr: ArrayLike<number>): void {
    for (let i = 0; i < arr.length; i++) this.f64(arr[i]);
  }

  bytes(): Uint8Array {
    return Uint8Array.from(this.chunks);
  }
}

export function serializeWeights(
  net: Network,
  config: ExportConfig,
  goldenInputs: Float64Array[],
): Uint8Array {
  const sink = new ByteSink();
  for (const c of [0x4d, 0x4c, 0x43, 0x57]) sink.u8(c); // "MLCW"
  sink.u32(1);
  sink.u32(config.order);
  sink.f64(config.epsGap);
  sink.u32(config.featureMeans.length);
  sink.f64Array(config.featureMeans);
  sink.f64Array(config.featureScales);
  sink.u32(net.layers.length);
  for (const layer of net.layers) {
    sink.u32(layer.inDim);
    sink.u32(layer.outDim);
    sink.u8(layer.norm ? 1 : 0);
    sink.u8(layer.activation === "relu" ? 1 : 0);
    sink.f64Array(layer.W);
    sink.f64Array(layer.b);
    if (layer.norm) {
      sink.f64Array(layer.norm.gamma);
      sink.f64Array(layer.norm.beta);
      sink.f64Array(layer.norm.runMean);
      sink.f64Array(layer.norm.runVar);
      sink.f64(layer.norm.eps);
    }
  }
  sink.u32(goldenInputs.length);
  const nFeat = config.featureMeans.length;
  for (const gin of goldenInputs) {
    if (gin.length !== nFeat) throw new Error("golden input width mismatch");
    sink.f64Array(gin);
    const std = new Float64Array(nFeat);
    for (let i = 0; i < nFeat; i++) {
      std[i] = (gin[i] - config.featureMeans[i]) / config.featureScales[i];
    }
    sink.f64Array(forward(net, std, 1));
  }
  const body = sink.bytes();
  const out = new Uint8Array(body.length + 4);
  out.set(body);
  new DataView(out.buffer).setUint32(body.length, crc32(body), true);
  return out;
}

export interface LoadedWeights {
  net: Network;
  config: ExportConfig;
  goldenInputs: Float64Array[];
  goldenOutputs: Float64Array[];
}

/** Round-trip reader used by the tests; the solver runtime has its own. */
export function parseWeights(buf: Uint8Array): LoadedWeights {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (new TextDecoder().decode(buf.subarray(0, 4)) !== "MLCW") throw new Error("bad magic");
  if (crc32(buf.subarray(0, buf.length - 4)) !== view.getUint32(buf.length - 4, true)) {
    throw new Error("crc mismatch");
  }
  let pos = 4;
  const u32 = () => {
    const v = view.getUint32(pos, true);
    pos += 4;
    return v;
  };
  const u8 = () => view.getUint8(pos++);
  const f64 = () => {
    const v = view.getFloat64(pos, true);
    pos += 8;
    return v;
  };
  const f64arr = (n: number) => {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) out[i] = f64();
    return out;
  };
  const version = u32();
  if (version !== 1) throw new Error(`unsupported version ${version}`);
  const order = u32();
  const epsGap = f64();
  const nFeat = u32();
  const means = f64arr(nFeat);
  const scales = f64arr(nFeat);
  const nLayers = u32();
  const net: Network = { layers: [] };
  for (let l = 0; l < nLayers; l++) {
    const inDim = u32();
    const outDim = u32();
    const hasNorm = u8();
    const act = u8();
    const W = f64arr(outDim * inDim);
    const b = f64arr(outDim);
    let norm = null;
    if (hasNorm) {
      norm = {
        gamma: f64arr(outDim),
        beta: f64arr(outDim),
        runMean: f64arr(outDim),
        runVar: f64arr(outDim),
        eps: f64(),
      };
    }
    net.layers.push({ inDim, outDim, W, b, norm, activation: act ? "relu" : "identity" });
  }
  const nGolden = u32();
  const goldenInputs: Float64Array[] = [];
  const goldenOutputs: Float64Array[] = [];
  for (let g = 0; g < nGolden; g++) {
    goldenInputs.push(f64arr(nFeat));
    goldenOutputs.push(f64arr(order + 1));
  }
  return {
    net,
    config: { order, epsGap, featureMeans: means, featureScales: scales },
    goldenInputs,
    goldenOutputs,
  };
}
