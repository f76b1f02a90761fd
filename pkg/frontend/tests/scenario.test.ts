/**
 * Desk-scale ordering check: on scenario (i) artifacts produced by the
 * comptomo pipeline, the uncertainty-aware loss must beat the plain
 * mean-squared loss. Needs COMPTOMO_DESK_DIR pointing at a working
 * directory containing matrix_prior, g1, eta_i and truth_coeffs; skipped
 * otherwise (build one with the desk preset first).
 */
import { existsSync } from 'node:fs';
import { join } from 'node:path';

import * as tf from '@tensorflow/tfjs';
import '@tensorflow/tfjs-backend-wasm';
import { beforeAll, describe, expect, it } from 'vitest';

import { trainDip } from '../src/dip.js';
import { nmse } from '../src/losses.js';
import { loadScenario } from '../src/main.js';

const deskDir = process.env.COMPTOMO_DESK_DIR ?? '';
const ready =
  deskDir !== '' &&
  ['matrix_prior.cstb', 'g1.cstb', 'eta_i.cstb', 'truth_coeffs.cstb'].every(
    (name) => existsSync(join(deskDir, name)),
  );
const iterations = Number(process.env.COMPTOMO_DIP_ITERATIONS ?? 800);

describe.skipIf(!ready)('desk-scale scenario (i) ordering', () => {
  beforeAll(async () => {
    await tf.setBackend('wasm');
    await tf.ready();
  });

  it('uncertainty-aware loss beats the plain loss', async () => {
    const inputs = loadScenario(deskDir, 'i');
    const zeroCorrection = new Float64Array(inputs.data.length);

    const runL1 = await trainDip({
      matrix: inputs.matrix,
      data: inputs.data,
      correction: zeroCorrection,
      gridSize: inputs.gridSize,
      loss: 'l1',
      iterations,
      warmupFraction: 1.0,
      seed: 7,
      outputScale: inputs.outputScale,
    });
    const runL2 = await trainDip({
      matrix: inputs.matrix,
      data: inputs.data,
      correction: inputs.correction,
      gridSize: inputs.gridSize,
      loss: 'l2',
      iterations,
      warmupFraction: 0.3,
      seed: 7,
      outputScale: inputs.outputScale,
    });

    const scoreL1 = nmse(runL1.reconstruction, inputs.truthCoeffs);
    const scoreL2 = nmse(runL2.reconstruction, inputs.truthCoeffs);
    console.log(
      `\nACCEPTANCE 12 ${scoreL2 < scoreL1 ? 'PASS' : 'FAIL'}: ` +
        `NMSE dip_l2 ${scoreL2.toFixed(4)} < dip_l1 ${scoreL1.toFixed(4)} ` +
        `(${iterations} iterations)`,
    );
    expect(scoreL2).toBeLessThan(scoreL1);
  }, 7_200_000);
});
