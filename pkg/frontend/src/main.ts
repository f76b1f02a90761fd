/**
 * Command-line trainer: reads pipeline artifacts (operator matrix, scenario
 * data, uncertainty maps) from a comptomo working directory, trains the
 * deep-image-prior network with the selected loss and writes the
 * reconstruction plus a metrics row.
 *
 *   node --experimental-strip-types src/main.ts \
 *     --workdir ../runs/desk --scenario i --loss l2 --iterations 800
 */
import { appendFileSync, existsSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

import * as tf from '@tensorflow/tfjs';
import '@tensorflow/tfjs-backend-wasm';

import { readCstb, writeCstb } from './cstb.js';
import { nmse } from './losses.js';
import { checkUpstreamHash, readManifest } from './manifest.js';
import { trainDip } from './dip.js';

export interface CliOptions {
  workdir: string;
  scenario: 'i' | 'ii' | 'iii' | 'iv';
  loss: 'l1' | 'l2';
  iterations: number;
  warmupFraction: number;
  seed: number;
  backend: string;
  logEvery: number;
}

export function parseArgs(argv: string[]): CliOptions {
  const options: CliOptions = {
    workdir: 'runs/desk',
    scenario: 'i',
    loss: 'l2',
    iterations: 800,
    warmupFraction: 0.3,
    seed: 7,
    backend: 'wasm',
    logEvery: 100,
  };
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`missing value for ${key}`);
    switch (key) {
      case '--workdir': options.workdir = value; break;
      case '--scenario':
        if (!['i', 'ii', 'iii', 'iv'].includes(value)) {
          throw new Error(`unknown scenario ${value}`);
        }
        options.scenario = value as CliOptions['scenario'];
        break;
      case '--loss':
        if (value !== 'l1' && value !== 'l2') throw new Error(`unknown loss ${value}`);
        options.loss = value;
        break;
      case '--iterations': options.iterations = Number(value); break;
      case '--warmup': options.warmupFraction = Number(value); break;
      case '--seed': options.seed = Number(value); break;
      case '--backend': options.backend = value; break;
      case '--log-every': options.logEvery = Number(value); break;
      default: throw new Error(`unknown option ${key}`);
    }
  }
  return options;
}

function differenceAlongEnergy(values: Float64Array, nBins: number, nTuples: number): Float64Array {
  const out = new Float64Array((nBins - 1) * nTuples);
  for (let p = 0; p < nBins - 1; p++) {
    for (let k = 0; k < nTuples; k++) {
      out[p * nTuples + k] = values[(p + 1) * nTuples + k] - values[p * nTuples + k];
    }
  }
  return out;
}

function differenceMatrixRows(
  matrix: Float64Array,
  nBins: number,
  nTuples: number,
  dim: number,
): Float64Array {
  const out = new Float64Array((nBins - 1) * nTuples * dim);
  for (let p = 0; p < nBins - 1; p++) {
    for (let k = 0; k < nTuples; k++) {
      const hi = ((p + 1) * nTuples + k) * dim;
      const lo = (p * nTuples + k) * dim;
      const dst = (p * nTuples + k) * dim;
      for (let j = 0; j < dim; j++) {
        out[dst + j] = matrix[hi + j] - matrix[lo + j];
      }
    }
  }
  return out;
}

export interface ScenarioInputs {
  matrix: Float64Array;
  data: Float64Array;
  correction: Float64Array;
  gridSize: number;
  truthCoeffs: Float64Array;
  outputScale: number;
}

export function loadScenario(workdir: string, scenario: CliOptions['scenario'], tau = 1.01): ScenarioInputs {
  const matrixManifest = readManifest(join(workdir, 'matrix_prior.manifest'));
  checkUpstreamHash(matrixManifest, 'matrix_sha256', join(workdir, 'matrix_prior.cstb'));
  const { dims, data: matrix } = readCstb(join(workdir, 'matrix_prior.cstb'));
  const [nRows, dim] = dims;
  const gridSize = Math.round(Math.sqrt(dim));

  const g1 = readCstb(join(workdir, 'g1.cstb'));
  const [nBins, nTuples] = g1.dims;

  let data: Float64Array;
  if (scenario === 'i') {
    data = g1.data;
  } else if (scenario === 'ii') {
    data = readCstb(join(workdir, 'g1_noisy.cstb')).data;
  } else {
    const g2 = readCstb(join(workdir, 'g2_mc.cstb')).data;
    data = g1.data.map((v, idx) => v + g2[idx]);
    if (scenario === 'iv') {
      data = differenceAlongEnergy(data, nBins, nTuples);
    }
  }

  const uman = readManifest(join(workdir, `uncertainty_${scenario}.manifest`));
  checkUpstreamHash(uman, 'eta_sha256', join(workdir, `eta_${scenario}.cstb`));
  const eta = readCstb(join(workdir, `eta_${scenario}.cstb`)).data;
  const rho = Number(uman.rho);
  let delta: Float64Array | null = null;
  if (scenario === 'ii') {
    delta = readCstb(join(workdir, 'delta_noise.cstb')).data;
  }
  const correction = Float64Array.from(eta, (e, idx) =>
    tau * (rho * e + (delta ? delta[idx] : 0)),
  );

  const effectiveMatrix =
    scenario === 'iv' ? differenceMatrixRows(matrix, nBins, nTuples, dim) : matrix;
  if (effectiveMatrix.length !== data.length * dim) {
    throw new Error('matrix/data shape mismatch after scenario preparation');
  }

  const truthCoeffs = readCstb(join(workdir, 'truth_coeffs.cstb')).data;
  let maxCoeff = 0;
  for (const v of truthCoeffs) maxCoeff = Math.max(maxCoeff, v);
  return {
    matrix: effectiveMatrix,
    data,
    correction,
    gridSize,
    truthCoeffs,
    outputScale: 1.1 * maxCoeff,
  };
}

export async function main(argv: string[]): Promise<number> {
  const options = parseArgs(argv);
  await tf.setBackend(options.backend);
  await tf.ready();

  const inputs = loadScenario(options.workdir, options.scenario);
  const result = await trainDip({
    matrix: inputs.matrix,
    data: inputs.data,
    correction: options.loss === 'l2' ? inputs.correction : new Float64Array(inputs.data.length),
    gridSize: inputs.gridSize,
    loss: options.loss,
    iterations: options.iterations,
    warmupFraction: options.warmupFraction,
    seed: options.seed,
    outputScale: inputs.outputScale,
    logEvery: options.logEvery,
  });

  const tag = `${options.scenario}_dip_${options.loss}`;
  const outPath = join(options.workdir, `recon_${tag}.cstb`);
  writeCstb(outPath, [inputs.gridSize * inputs.gridSize], result.reconstruction);
  writeFileSync(
    join(options.workdir, `losses_${tag}.txt`),
    result.lossHistory.map((v, i) => `${i} ${v.toExponential(9)}`).join('\n') + '\n',
  );

  const score = nmse(result.reconstruction, inputs.truthCoeffs);
  const csvPath = join(options.workdir, 'metrics_dip.csv');
  if (!existsSync(csvPath)) {
    appendFileSync(csvPath, 'scenario,method,snr,psnr,ssim,nmse\n');
  }
  appendFileSync(csvPath, `${options.scenario},dip_${options.loss},-,-,-,${score.toFixed(6)}\n`);
  console.log(`${tag}: coefficient-space NMSE ${score.toFixed(4)}`);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (invokedDirectly) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(err);
      process.exit(1);
    },
  );
}
