import { describe, expect, it } from 'vitest';

import { applyMatrix, lossL1, lossL2, nmse } from '../src/losses.js';
import { mulberry32 } from '../src/rng.js';

/** Independent oracle: per-subproblem accumulation in a different order. */
function bruteForceL1(
  prediction: Float64Array,
  matrix: Float64Array,
  data: Float64Array,
): number {
  let total = 0;
  for (let r = data.length - 1; r >= 0; r--) {
    let inner = 0;
    for (let c = prediction.length - 1; c >= 0; c--) {
      inner += matrix[r * prediction.length + c] * prediction[c];
    }
    const gap = inner - data[r];
    total += gap ** 2;
  }
  return total / data.length;
}

function bruteForceL2(
  prediction: Float64Array,
  matrix: Float64Array,
  data: Float64Array,
  correction: Float64Array,
): number {
  let total = 0;
  for (let r = data.length - 1; r >= 0; r--) {
    let inner = 0;
    for (let c = prediction.length - 1; c >= 0; c--) {
      inner += matrix[r * prediction.length + c] * prediction[c];
    }
    const gap = (inner - data[r]) ** 2 - correction[r] ** 2;
    total += gap ** 2;
  }
  return total / data.length;
}

function randomInstance(seed: number, rows = 17, cols = 9) {
  const rand = mulberry32(seed);
  const matrix = Float64Array.from({ length: rows * cols }, () => rand() - 0.5);
  const prediction = Float64Array.from({ length: cols }, () => rand() * 2);
  const data = Float64Array.from({ length: rows }, () => rand() - 0.5);
  const correction = Float64Array.from({ length: rows }, () => rand() * 0.3);
  return { matrix, prediction, data, correction };
}

describe('loss functions', () => {
  it('l1 vanishes on an exact fit', () => {
    const { matrix, prediction } = randomInstance(1);
    const data = applyMatrix(matrix, 17, 9, prediction);
    expect(lossL1(prediction, matrix, data)).toBe(0);
  });

  it('l1 of a single deviating entry is d^2 / (PK)', () => {
    const { matrix, prediction } = randomInstance(2);
    const data = applyMatrix(matrix, 17, 9, prediction);
    data[5] += 0.25;
    expect(lossL1(prediction, matrix, data)).toBeCloseTo(0.25 ** 2 / 17, 14);
  });

  it('l1 matches the brute-force oracle to 1e-10', () => {
    for (let seed = 3; seed < 13; seed++) {
      const { matrix, prediction, data } = randomInstance(seed);
      const got = lossL1(prediction, matrix, data);
      const want = bruteForceL1(prediction, matrix, data);
      expect(Math.abs(got - want)).toBeLessThanOrEqual(1e-10 * Math.max(1, want));
    }
  });

  it('l2 is exactly zero when every residual equals its correction', () => {
    const { matrix, prediction, data } = randomInstance(20);
    const clean = applyMatrix(matrix, 17, 9, prediction);
    // corrections set to the realised residual magnitudes: every summand
    // r^2 - c^2 cancels bit-exactly
    const correction = Float64Array.from(clean, (v, r) => Math.abs(v - data[r]));
    expect(lossL2(prediction, matrix, data, correction)).toBe(0);
  });

  it('l2 with zero correction is the mean fourth power of residuals', () => {
    const { matrix, prediction, data } = randomInstance(21);
    const res = applyMatrix(matrix, 17, 9, prediction).map((v, r) => v - data[r]);
    let want = 0;
    for (const r of res) want += r ** 4;
    want /= res.length;
    const zero = new Float64Array(17);
    expect(lossL2(prediction, matrix, data, zero)).toBeCloseTo(want, 12);
  });

  it('l2 matches the brute-force oracle to 1e-10', () => {
    for (let seed = 30; seed < 40; seed++) {
      const { matrix, prediction, data, correction } = randomInstance(seed);
      const got = lossL2(prediction, matrix, data, correction);
      const want = bruteForceL2(prediction, matrix, data, correction);
      expect(Math.abs(got - want)).toBeLessThanOrEqual(1e-10 * Math.max(1, want));
    }
  });

  it('l2 rejects negative corrections', () => {
    const { matrix, prediction, data } = randomInstance(50);
    const bad = new Float64Array(17).fill(-1);
    expect(() => lossL2(prediction, matrix, data, bad)).toThrow(/nonnegative/);
  });
});

describe('nmse', () => {
  it('is zero on identical vectors and |a-1| under scaling', () => {
    const rand = mulberry32(9);
    const truth = Float64Array.from({ length: 40 }, () => rand() + 0.5);
    expect(nmse(truth, truth)).toBe(0);
    for (const a of [0, 0.5, 2]) {
      const scaled = Float64Array.from(truth, (v) => a * v);
      expect(nmse(scaled, truth)).toBeCloseTo(Math.abs(a - 1), 12);
    }
  });
});
