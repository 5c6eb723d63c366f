/**
 * Reader for BGKD trajectory datasets (little-endian, crc32-tailed):
 *
 *   magic "BGKD", u32 version, u32 M, u32 n_cells, f64 x_a, f64 x_b,
 *   u8 generator (0 hme | 1 dvm), u64 base_seed, u32 n_records,
 *   then per record: u64 seed, f64 tau, u8 kind (0 wave | 1 mix),
 *   u32 n_params + f64 params, u32 n_times + f64 times,
 *   f64 values[n_times][M+2][n_cells], f64 gradients[same],
 *   trailing u32 crc32 over everything before it.
 *
 * Field rows are (rho, u, theta, f_3, ..., f_{M+1}).
 */

import { crc32 } from "./crc32.js";

export interface DatasetRecord {
  seed: bigint;
  tau: number;
  kind: "wave" | "mix";
  params: Float64Array;
  times: Float64Array;
  /** (n_times, M+2, n_cells) flattened row-major. */
  values: Float64Array;
  gradients: Float64Array;
}

export interface Dataset {
  order: number;
  nCells: number;
  xA: number;
  xB: number;
  generator: "hme" | "dvm";
  baseSeed: bigint;
  records: DatasetRecord[];
}

export class DatasetFormatError extends Error {}

class Reader {
  private view: DataView;
  pos = 0;

  constructor(private buf: Uint8Array) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  private need(n: number): void {
    if (this.pos + n > this.buf.length) {
      throw new DatasetFormatError(`truncated at offset ${this.pos}`);
    }
  }

  u8(): number {
    this.need(1);
    return this.view.getUint8(this.pos++);
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }

  u64(): bigint {
    this.need(8);
    const v = this.view.getBigUint64(this.pos, true);
    this.pos += 8;
    return v;
  }

  f64(): number {
    this.need(8);
    const v = this.view.getFloat64(this.pos, true);
    this.pos += 8;
    return v;
  }

  f64Array(n: number): Float64Array {
    this.need(8 * n);
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = this.view.getFloat64(this.pos + 8 * i, true);
    }
    this.pos += 8 * n;
    return out;
  }

  bytes(n: number): Uint8Array {
    this.need(n);
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }
}

export function readDataset(buf: Uint8Array): Dataset {
  if (buf.length < 8) throw new DatasetFormatError("file too short");
  const magic = new TextDecoder().decode(buf.subarray(0, 4));
  if (magic !== "BGKD") throw new DatasetFormatError(`bad magic ${magic}`);
  const body = buf.subarray(0, buf.length - 4);
  const tail = new DataView(buf.buffer, buf.byteOffset + buf.length - 4, 4).getUint32(0, true);
  if (crc32(body) !== tail) throw new DatasetFormatError("crc32 mismatch");

  const r = new Reader(body);
  r.bytes(4);
  const version = r.u32();
  if (version !== 1) throw new DatasetFormatError(`unsupported version ${version}`);
  const order = r.u32();
  const nCells = r.u32();
  const xA = r.f64();
  const xB = r.f64();
  const gen = r.u8();
  const baseSeed = r.u64();
  const nRecords = r.u32();
  const ds: Dataset = {
    order,
    nCells,
    xA,
    xB,
    generator: gen === 0 ? "hme" : "dvm",
    baseSeed,
    records: [],
  };
  const rows = order + 2;
  for (let k = 0; k < nRecords; k++) {
    const seed = r.u64();
    const tau = r.f64();
    const kind = r.u8();
    const nParams = r.u32();
    const params = r.f64Array(nParams);
    const nTimes = r.u32();
    const times = r.f64Array(nTimes);
    const count = nTimes * rows * nCells;
    const values = r.f64Array(count);
    const gradients = r.f64Array(count);
    ds.records.push({
      seed,
      tau,
      kind: kind === 0 ? "wave" : "mix",
      params,
      times,
      values,
      gradients,
    });
  }
  if (r.pos !== body.length) throw new DatasetFormatError("trailing bytes before checksum");
  return ds;
}
