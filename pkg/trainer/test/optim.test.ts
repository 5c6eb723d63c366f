import { describe, expect, it } from "vitest";

import { AdamW, lrrtSchedule, OneCycle } from "../src/optim.js";

describe("AdamW", () => {
  it("minimizes a quadratic", () => {
    const p = Float64Array.from([5, -3]);
    const opt = new AdamW([p], { lr: 0.1 });
    for (let i = 0; i < 500; i++) {
      const g = Float64Array.from([2 * (p[0] - 1), 2 * (p[1] + 2)]);
      opt.step([g]);
    }
    expect(p[0]).toBeCloseTo(1, 3);
    expect(p[1]).toBeCloseTo(-2, 3);
  });

  it("applies decay decoupled from the gradient moments", () => {
    // zero gradient: the update is pure shrinkage p <- p (1 - lr wd)
    const p = Float64Array.from([2.0]);
    const opt = new AdamW([p], { lr: 0.5, weightDecay: 0.1 });
    opt.step([Float64Array.from([0])]);
    expect(p[0]).toBeCloseTo(2.0 * (1 - 0.5 * 0.1), 12);
  });

  it("honours no-decay groups", () => {
    const w = Float64Array.from([1.0]);
    const b = Float64Array.from([1.0]);
    const opt = new AdamW([w, b], { lr: 0.5, weightDecay: 0.2, noDecay: new Set([1]) });
    opt.step([Float64Array.from([0]), Float64Array.from([0])]);
    expect(w[0]).toBeCloseTo(0.9, 12);
    expect(b[0]).toBe(1.0);
  });
});

describe("one-cycle schedule", () => {
  it("ramps up then anneals below the floor it started from", () => {
    const total = 1000;
    const sched = new OneCycle(1e-2, total, 0.3);
    const lrs = Array.from({ length: total }, (_, i) => sched.lrAt(i));
    expect(lrs[0]).toBeCloseTo(1e-2 / 25, 12);
    const peakAt = lrs.indexOf(Math.max(...lrs));
    expect(peakAt).toBeGreaterThan(0.25 * total);
    expect(peakAt).toBeLessThan(0.35 * total);
    expect(Math.max(...lrs)).toBeCloseTo(1e-2, 6);
    expect(lrs[total - 1]).toBeCloseTo(1e-2 / 1e4, 8);
    // single cycle: non-decreasing then non-increasing
    for (let i = 1; i <= peakAt; i++) expect(lrs[i]).toBeGreaterThanOrEqual(lrs[i - 1] - 1e-15);
    for (let i = peakAt + 1; i < total; i++) expect(lrs[i]).toBeLessThanOrEqual(lrs[i - 1] + 1e-15);
  });
});

describe("learning-rate range schedule", () => {
  it("is geometric and monotone", () => {
    const lrs = lrrtSchedule(1e-6, 1e-1, 50);
    expect(lrs[0]).toBeCloseTo(1e-6, 12);
    expect(lrs[49]).toBeCloseTo(1e-1, 6);
    for (let i = 1; i < 50; i++) {
      expect(lrs[i]).toBeGreaterThan(lrs[i - 1]);
      expect(lrs[i] / lrs[i - 1]).toBeCloseTo(lrs[1] / lrs[0], 8);
    }
  });

  it("degenerates to a flat series at rate zero", () => {
    const lrs = lrrtSchedule(0, 0, 10);
    expect(Array.from(lrs)).toEqual(new Array(10).fill(0));
  });
});
