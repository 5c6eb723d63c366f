/**
 * Exact algebra turning network outputs into gradient-closure coefficients,
 * with a hand-derived backward pass so training can differentiate through it.
 *
 * Forward chain per sample (all in the co-moving frame, so the bulk velocity
 * never appears):
 *
 *   raw (M+1)  --cumulative softplus-->  strictly increasing offsets
 *   offsets    --Vieta-->               monic polynomial coefficients c
 *   c, theta   --basis change-->        Hermite coefficients beta
 *   beta, w    --triangular solve-->    matrix last row a
 *   a, w       --subtract base row-->   gradient coefficients N
 *
 * The closing-moment gradient prediction is then sum_i N_i * dx w_i.  The
 * same algebra runs inside the inference runtime, which is what makes an
 * exported model hyperbolic by construction rather than by training.
 */

export interface SampleState {
  rho: number;
  theta: number;
  /** Higher moments f_3 .. f_M (length order - 2). */
  f: Float64Array;
}

export interface PipelineCache {
  order: number;
  raw: Float64Array;
  offsets: Float64Array;
  coeffs: Float64Array; // c_0 .. c_M (monic leading 1 implicit)
  beta: Float64Array;
  pw: Float64Array; // sqrt(theta)^i, i = 0 .. M+1
  Q: Float64Array; // (M+1)^2 dense, column i = M! * q_i in Hermite rows
  theta: number;
}

export function factorial(n: number): number {
  let out = 1;
  for (let i = 2; i <= n; i++) out *= i;
  return out;
}

export function hermiteEval(k: number, x: number): number {
  let prev = 1;
  if (k === 0) return prev;
  let cur = x;
  for (let j = 1; j < k; j++) {
    const next = x * cur - j * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/** Roots of He_k by bracketed bisection (roots are simple and real). */
export function hermiteRoots(k: number): Float64Array {
  const bound = 2 * Math.sqrt(k) + 1;
  const nScan = 4000;
  const roots: number[] = [];
  let xPrev = -bound;
  let fPrev = hermiteEval(k, xPrev);
  for (let i = 1; i <= nScan; i++) {
    const x = -bound + (2 * bound * i) / nScan;
    const f = hermiteEval(k, x);
    if (fPrev === 0) roots.push(xPrev);
    else if (fPrev * f < 0) {
      let lo = xPrev;
      let hi = x;
      let flo = fPrev;
      for (let it = 0; it < 200; it++) {
        const mid = 0.5 * (lo + hi);
        const fm = hermiteEval(k, mid);
        if (flo * fm <= 0) hi = mid;
        else {
          lo = mid;
          flo = fm;
        }
        if (hi - lo < 1e-15) break;
      }
      roots.push(0.5 * (lo + hi));
    }
    xPrev = x;
    fPrev = f;
  }
  if (roots.length !== k) throw new Error(`found ${roots.length} roots of He_${k}, expected ${k}`);
  return Float64Array.from(roots);
}

/** Connection coefficient b_{mk} in x^m = sum_k b_{mk} He_k(x). */
export function hermiteConnection(m: number, k: number): number {
  if ((m - k) % 2 !== 0 || k < 0 || k > m) return 0;
  const j = (m - k) / 2;
  return factorial(m) / (2 ** j * factorial(j) * factorial(k));
}

export function softplus(x: number): number {
  return x > 0 ? x + Math.log1p(Math.exp(-x)) : Math.log1p(Math.exp(x));
}

export function sigmoid(x: number): number {
  return x > 0 ? 1 / (1 + Math.exp(-x)) : Math.exp(x) / (1 + Math.exp(x));
}

/** Inverse of softplus, for seeding the head at prescribed offsets. */
export function softplusInv(y: number): number {
  return y > 30 ? y : Math.log(Math.expm1(y));
}

export function offsetsFromRaw(raw: Float64Array, epsGap: number): Float64Array {
  const out = new Float64Array(raw.length);
  out[0] = raw[0];
  for (let k = 1; k < raw.length; k++) {
    out[k] = out[k - 1] + softplus(raw[k]) + epsGap;
  }
  return out;
}

/** Monic expansion: coefficients c_0 .. c_M of prod (y - r_k), leading 1 dropped. */
export function vieta(offsets: Float64Array): Float64Array {
  const n = offsets.length;
  let coeffs = new Float64Array(n + 1);
  coeffs[0] = 1;
  let deg = 0;
  for (let j = 0; j < n; j++) {
    const next = new Float64Array(n + 1);
    for (let i = 0; i <= deg; i++) {
      next[i + 1] += coeffs[i];
      next[i] -= offsets[j] * coeffs[i];
    }
    coeffs = next;
    deg++;
  }
  return coeffs.subarray(0, n);
}

function fMoment(state: SampleState, k: number): number {
  if (k === 0) return state.rho;
  if (k === 1 || k === 2) return 0;
  return state.f[k - 3];
}

/** Last row of the truncation-closure matrix in the co-moving frame. */
export function gradBaseRow(order: number, state: SampleState): Float64Array {
  const base = new Float64Array(order + 1);
  const { rho, theta } = state;
  base[0] = (-theta / rho) * fMoment(state, order - 1);
  base[1] = (order + 1) * fMoment(state, order);
  base[2] = 0.5 * (order - 1) * fMoment(state, order - 1) + 0.5 * theta * fMoment(state, order - 3);
  base[3] += (-3 / rho) * fMoment(state, order - 2);
  base[order - 1] += theta;
  // base[order] would carry u, which is zero in this frame
  return base;
}

/**
 * Forward pass: raw head outputs -> gradient coefficients N_0 .. N_M.
 * Returns the coefficients and the cache needed for the backward pass.
 */
export function coeffsFromRaw(
  raw: Float64Array,
  state: SampleState,
  epsGap: number
): { N: Float64Array; cache: PipelineCache } {
  const order = raw.length - 1;
  const m1 = order + 1;
  const { rho, theta } = state;
  const offsets = offsetsFromRaw(raw, epsGap);
  const coeffs = vieta(offsets);

  const pw = new Float64Array(m1 + 1);
  pw[0] = 1;
  const sqt = Math.sqrt(theta);
  for (let i = 1; i <= m1; i++) pw[i] = pw[i - 1] * sqt;

  // beta_k = pw^{-k} sum_{i>=k} c_i pw^i b_{ik}, with c_{M+1} = 1
  const beta = new Float64Array(m1);
  for (let k = 0; k < m1; k++) {
    let acc = pw[m1] * hermiteConnection(m1, k);
    for (let i = k; i <= order; i++) {
      acc += coeffs[i] * pw[i] * hermiteConnection(i, k);
    }
    beta[k] = acc / pw[k];
  }

  // dense columns Q[:, i] = M! * q_i in the Hermite basis
  const mfac = factorial(order);
  const Q = new Float64Array(m1 * m1);
  const qset = (row: number, col: number, val: number) => {
    Q[row * m1 + col] = val;
  };
  qset(0, 0, mfac);
  qset(1, 1, (mfac * sqt) / rho);
  qset(2, 2, (mfac * pw[2]) / rho);
  qset(3, 3, (mfac * pw[3]) / 6);
  for (let k = 4; k <= order; k++) {
    qset(k, k, (mfac * pw[k]) / factorial(k));
    qset(2, k, (-mfac * theta * fMoment(state, k - 2)) / (2 * rho));
    qset(1, k, (-mfac * sqt * fMoment(state, k - 1)) / rho);
  }

  // T = M! x q_M - P, expanded over He_0 .. He_M (the He_{M+1} terms cancel)
  const T = new Float64Array(m1);
  for (let j = 0; j <= order; j++) {
    const col = Q[j * m1 + order] / mfac; // q_M coefficient at He_j
    if (col === 0) continue;
    if (j + 1 <= order) T[j + 1] += mfac * sqt * col;
    if (j >= 1) T[j - 1] += mfac * sqt * j * col;
  }
  for (let k = 0; k < m1; k++) T[k] -= beta[k] * pw[k];

  // triangular back-substitution a_M .. a_0
  const a = new Float64Array(m1);
  for (let i = order; i >= 0; i--) {
    a[i] = T[i] / Q[i * m1 + i];
    for (let j = 0; j < m1; j++) T[j] -= a[i] * Q[j * m1 + i];
  }

  const base = gradBaseRow(order, state);
  const N = new Float64Array(m1);
  for (let i = 0; i < m1; i++) N[i] = (a[i] - base[i]) / (order + 1);
  return { N, cache: { order, raw, offsets, coeffs, beta, pw, Q, theta } };
}

/** Backward pass: gradient of the loss w.r.t. the raw head outputs. */
export function coeffsBackward(cache: PipelineCache, dN: Float64Array): Float64Array {
  const { order, offsets, coeffs, pw, Q } = cache;
  const m1 = order + 1;

  // dL/da = dN / (M+1); base row is data, not parameters
  const da = new Float64Array(m1);
  for (let i = 0; i < m1; i++) da[i] = dN[i] / (order + 1);

  // Solve Q^T y = da.  Column i of Q touches Hermite rows {i, 1, 2}, so the
  // transposed system is forward-substitutable once y_1, y_2 are known.
  const y = new Float64Array(m1);
  y[0] = da[0] / Q[0];
  y[1] = da[1] / Q[1 * m1 + 1];
  y[2] = da[2] / Q[2 * m1 + 2];
  y[3] = da[3] / Q[3 * m1 + 3];
  for (let i = 4; i < m1; i++) {
    y[i] = (da[i] - Q[1 * m1 + i] * y[1] - Q[2 * m1 + i] * y[2]) / Q[i * m1 + i];
  }

  // T_k depends on beta_k through -beta_k pw_k
  const dbeta = new Float64Array(m1);
  for (let k = 0; k < m1; k++) dbeta[k] = -pw[k] * y[k];

  // beta_k = pw^{-k} sum_i c_i pw^i b_{ik}  (i <= M varies; i = M+1 is fixed)
  const dc = new Float64Array(m1);
  for (let i = 0; i < m1; i++) {
    let acc = 0;
    for (let k = i % 2; k <= i; k += 2) {
      acc += dbeta[k] * (pw[i] / pw[k]) * hermiteConnection(i, k);
    }
    dc[i] = acc;
  }

  // c = vieta(offsets): d c_i / d r_k = -(deflated polynomial coefficients)
  const dOffsets = new Float64Array(m1);
  const quot = new Float64Array(m1); // degree-M quotient of synthetic division
  for (let k = 0; k < m1; k++) {
    quot[order] = 1;
    for (let i = order; i >= 1; i--) {
      quot[i - 1] = coeffs[i] + offsets[k] * quot[i];
    }
    let acc = 0;
    for (let i = 0; i < m1; i++) acc -= dc[i] * quot[i];
    dOffsets[k] = acc;
  }

  // offsets are a cumulative softplus ladder of the raw head
  const draw = new Float64Array(m1);
  let suffix = 0;
  for (let k = order; k >= 1; k--) {
    suffix += dOffsets[k];
    draw[k] = sigmoid(cache.raw[k]) * suffix;
  }
  draw[0] = suffix + dOffsets[0];
  return draw;
}

/** Analytic coefficients of the hyperbolic regularization, for references. */
export function hmeCoefficients(order: number, state: SampleState): Float64Array {
  const N = new Float64Array(order + 1);
  N[1] = -fMoment(state, order);
  N[2] = -0.5 * fMoment(state, order - 1);
  return N;
}
