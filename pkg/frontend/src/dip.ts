/**
 * Deep-image-prior training against the fully discrete scattering operator.
 *
 * The network maps a fixed random field to a coefficient image; training
 * minimises the data misfit, first with the plain mean-squared loss for a
 * warmup stretch, then with the uncertainty-aware loss whose optimum puts
 * every residual on its stripe boundary.  The second phase restarts the
 * optimiser with a smaller learning rate and clips gradient norms under a
 * decaying threshold, taming the larger dynamics of that loss.
 */
import * as tf from '@tensorflow/tfjs';

import { buildDipNetwork } from './unet.js';
import { uniformArray } from './rng.js';

export interface TrainOptions {
  /** (P*K) x D operator matrix, row-major. */
  matrix: Float64Array;
  data: Float64Array;
  /** Model-correction terms c_{p,k} = tau (rho eta + delta); zeros for l1. */
  correction: Float64Array;
  gridSize: number;
  loss: 'l1' | 'l2';
  iterations: number;
  /** Fraction of the budget trained on the plain loss before switching. */
  warmupFraction: number;
  seed: number;
  /** Sigmoid output is mapped affinely onto [0, outputScale]. */
  outputScale: number;
  learningRate?: number;
  l2LearningRate?: number;
  clipStart?: number;
  clipEnd?: number;
  logEvery?: number;
}

export interface TrainResult {
  reconstruction: Float64Array;
  lossHistory: number[];
  switchIteration: number;
}

export async function trainDip(options: TrainOptions): Promise<TrainResult> {
  const {
    matrix,
    data,
    correction,
    gridSize,
    iterations,
    seed,
    outputScale,
  } = options;
  const rows = data.length;
  const dim = gridSize * gridSize;
  if (matrix.length !== rows * dim) {
    throw new Error(`matrix length ${matrix.length} != ${rows}x${dim}`);
  }
  const lr1 = options.learningRate ?? 3e-3;
  const lr2 = options.l2LearningRate ?? 1e-3;
  const logEvery = options.logEvery ?? 0;

  // normalise data units so float32 arithmetic keeps precision
  const dataScale = Math.max(...data.map(Math.abs), 1e-300);
  const scaledMatrix = Float32Array.from(matrix, (v) => v / dataScale);
  const scaledData = Float32Array.from(data, (v) => v / dataScale);
  const scaledCorrection = Float32Array.from(correction, (v) => v / dataScale);

  const matA = tf.tensor2d(scaledMatrix, [rows, dim]);
  const g = tf.tensor2d(scaledData, [rows, 1]);
  const c2 = tf.tensor2d(
    Float32Array.from(scaledCorrection, (v) => v * v),
    [rows, 1],
  );

  const model = buildDipNetwork({ size: gridSize, seed });
  const z = tf.tensor4d(uniformArray(dim, seed + 1, -0.5, 0.5), [
    1,
    gridSize,
    gridSize,
    1,
  ]);

  const predict = () => model.forward(z);

  const lossL1 = (): tf.Scalar =>
    tf.tidy(() => {
      const phi = predict().reshape([dim, 1]).mul(outputScale);
      return matA.matMul(phi, false, false).sub(g).square().mean();
    });

  const lossL2 = (): tf.Scalar =>
    tf.tidy(() => {
      const phi = predict().reshape([dim, 1]).mul(outputScale);
      const res2 = matA.matMul(phi, false, false).sub(g).square();
      return res2.sub(c2).square().mean();
    });

  const warmup =
    options.loss === 'l2'
      ? Math.max(1, Math.round(options.warmupFraction * iterations))
      : iterations;
  const clipStart = options.clipStart ?? 1.0;
  const clipEnd = options.clipEnd ?? 0.05;

  let optimizer = tf.train.adam(lr1);
  const history: number[] = [];

  for (let iter = 0; iter < iterations; iter++) {
    if (iter === warmup && options.loss === 'l2') {
      optimizer.dispose();
      optimizer = tf.train.adam(lr2);
    }
    const inL2 = options.loss === 'l2' && iter >= warmup;
    const lossFn = inL2 ? lossL2 : lossL1;
    const { value, grads } = tf.variableGrads(lossFn, model.variables);
    const lossValue = (await value.data())[0];
    value.dispose();
    if (!Number.isFinite(lossValue)) {
      Object.values(grads).forEach((t) => t.dispose());
      optimizer.dispose();
      throw new Error(`training diverged at iteration ${iter} (loss ${lossValue})`);
    }
    history.push(lossValue);

    if (inL2) {
      // decaying gradient-norm ceiling over the second phase
      const progress = (iter - warmup) / Math.max(1, iterations - warmup);
      const threshold = clipStart * Math.pow(clipEnd / clipStart, progress);
      tf.tidy(() => {
        const norms = Object.values(grads).map((t) => t.square().sum());
        const globalNorm = Math.sqrt(
          norms.reduce((acc, t) => acc + t.dataSync()[0], 0),
        );
        if (globalNorm > threshold) {
          const factor = threshold / globalNorm;
          for (const key of Object.keys(grads)) {
            const clipped = grads[key].mul(factor);
            grads[key].dispose();
            grads[key] = tf.keep(clipped);
          }
        }
      });
    }
    optimizer.applyGradients(grads as Parameters<typeof optimizer.applyGradients>[0]);
    Object.values(grads).forEach((t) => t.dispose());
    if (logEvery > 0 && iter % logEvery === 0) {
      console.log(`iter ${iter} loss ${lossValue.toExponential(4)}`);
    }
  }

  const outTensor = tf.tidy(() =>
    model.forward(z).reshape([dim]).mul(outputScale),
  );
  const reconstruction = Float64Array.from(await outTensor.data());
  outTensor.dispose();
  matA.dispose();
  g.dispose();
  c2.dispose();
  z.dispose();
  optimizer.dispose();
  model.dispose();

  return {
    reconstruction,
    lossHistory: history,
    switchIteration: options.loss === 'l2' ? warmup : iterations,
  };
}
