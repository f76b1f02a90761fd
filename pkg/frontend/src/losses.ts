/**
 * DIP loss functions on plain arrays.
 *
 * lossL1 is the mean squared data misfit.  lossL2 instead drives every
 * squared residual toward its model-correction level c^2: a zero summand
 * means the prediction sits on the boundary of that subproblem's
 * uncertainty stripe, which is where the true solution is expected.
 */

export function applyMatrix(
  matrix: Float64Array,
  rows: number,
  cols: number,
  x: Float64Array,
): Float64Array {
  if (matrix.length !== rows * cols) {
    throw new Error(`matrix length ${matrix.length} != ${rows}x${cols}`);
  }
  if (x.length !== cols) {
    throw new Error(`vector length ${x.length} != ${cols}`);
  }
  const out = new Float64Array(rows);
  for (let r = 0; r < rows; r++) {
    let acc = 0;
    const base = r * cols;
    for (let c = 0; c < cols; c++) {
      acc += matrix[base + c] * x[c];
    }
    out[r] = acc;
  }
  return out;
}

function residuals(
  prediction: Float64Array,
  matrix: Float64Array,
  data: Float64Array,
): Float64Array {
  const rows = data.length;
  const cols = prediction.length;
  const out = applyMatrix(matrix, rows, cols, prediction);
  for (let r = 0; r < rows; r++) {
    out[r] -= data[r];
  }
  return out;
}

export function lossL1(
  prediction: Float64Array,
  matrix: Float64Array,
  data: Float64Array,
): number {
  const res = residuals(prediction, matrix, data);
  let acc = 0;
  for (let r = 0; r < res.length; r++) {
    acc += res[r] * res[r];
  }
  return acc / res.length;
}

export function lossL2(
  prediction: Float64Array,
  matrix: Float64Array,
  data: Float64Array,
  correction: Float64Array,
): number {
  if (correction.length !== data.length) {
    throw new Error(`correction length ${correction.length} != ${data.length}`);
  }
  for (let i = 0; i < correction.length; i++) {
    if (correction[i] < 0) {
      throw new Error('correction terms must be nonnegative');
    }
  }
  const res = residuals(prediction, matrix, data);
  let acc = 0;
  for (let r = 0; r < res.length; r++) {
    const gap = res[r] * res[r] - correction[r] * correction[r];
    acc += gap * gap;
  }
  return acc / res.length;
}

export function nmse(reconstruction: Float64Array, groundTruth: Float64Array): number {
  if (reconstruction.length !== groundTruth.length) {
    throw new Error('shape mismatch');
  }
  let num = 0;
  let den = 0;
  for (let i = 0; i < groundTruth.length; i++) {
    const d = reconstruction[i] - groundTruth[i];
    num += d * d;
    den += groundTruth[i] * groundTruth[i];
  }
  if (den === 0) {
    throw new Error('ground truth is identically zero');
  }
  return Math.sqrt(num / den);
}
