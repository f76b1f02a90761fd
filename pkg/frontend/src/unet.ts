/**
 * Encoder-decoder network for deep-image-prior reconstruction.
 *
 * Seven resolution scales with (32, 32, 64, 64, 128, 128, 256) channels,
 * six skip connections from every non-bottom encoder scale to its decoder
 * counterpart, and a sigmoid head so the output lives in [0, 1].
 *
 * All operations are spelled out with pad/slice/concat/matMul and
 * reshape/transpose pixel shuffles: 3x3 convolutions go through im2col,
 * downsampling packs 2x2 blocks into channels, upsampling unpacks them.
 * This keeps both the forward and the autodiff backward pass inside the
 * kernel set every tfjs backend provides (the wasm backend ships no
 * convolution backprop kernels).
 */
import * as tf from '@tensorflow/tfjs';

import { mulberry32 } from './rng.js';

export const CHANNELS = [32, 32, 64, 64, 128, 128, 256] as const;
export const N_SKIPS = CHANNELS.length - 1;

export interface NetworkOptions {
  seed: number;
  size: number;
}

function heWeights(
  rand: () => number,
  fanIn: number,
  shape: number[],
): tf.Tensor {
  const count = shape.reduce((a, b) => a * b, 1);
  const std = Math.sqrt(2.0 / fanIn);
  const values = new Float32Array(count);
  for (let i = 0; i < count; i += 2) {
    // Box-Muller from the seeded stream keeps initialisation identical
    // across backends
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    const r = Math.sqrt(-2.0 * Math.log(u1));
    values[i] = std * r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < count) values[i + 1] = std * r * Math.sin(2 * Math.PI * u2);
  }
  return tf.tensor(values, shape);
}

interface ConvParams {
  weight: tf.Variable; // [k*k*cin, cout]
  bias: tf.Variable; // [cout]
  kernel: number;
  cin: number;
  cout: number;
  gamma?: tf.Variable; // per-channel normalisation scale
  beta?: tf.Variable; // per-channel normalisation shift
}

function makeConv(
  rand: () => number,
  kernel: number,
  cin: number,
  cout: number,
  store: tf.Variable[],
  options: { biasInit?: number; normalise?: boolean } = {},
): ConvParams {
  const weight = tf.variable(
    heWeights(rand, kernel * kernel * cin, [kernel * kernel * cin, cout]),
  );
  const biasInit = options.biasInit ?? 0.0;
  const bias = tf.variable(
    biasInit === 0.0 ? tf.zeros([cout]) : tf.fill([cout], biasInit),
  );
  store.push(weight, bias);
  const params: ConvParams = { weight, bias, kernel, cin, cout };
  if (options.normalise) {
    params.gamma = tf.variable(tf.ones([cout]));
    params.beta = tf.variable(tf.zeros([cout]));
    store.push(params.gamma, params.beta);
  }
  return params;
}

/** im2col 3x3 (or 1x1) same-padding convolution as a single matMul. */
function conv(x: tf.Tensor4D, p: ConvParams): tf.Tensor4D {
  return tf.tidy(() => {
    const [n, h, w] = x.shape;
    let patches: tf.Tensor4D;
    if (p.kernel === 1) {
      patches = x;
    } else {
      const half = (p.kernel - 1) / 2;
      const padded = tf.pad4d(x, [
        [0, 0],
        [half, half],
        [half, half],
        [0, 0],
      ]);
      const shifts: tf.Tensor4D[] = [];
      for (let dy = 0; dy < p.kernel; dy++) {
        for (let dx = 0; dx < p.kernel; dx++) {
          shifts.push(tf.slice4d(padded, [0, dy, dx, 0], [n, h, w, p.cin]));
        }
      }
      patches = tf.concat4d(shifts, 3);
    }
    const flat = patches.reshape([n * h * w, p.kernel * p.kernel * p.cin]);
    let out = tf
      .matMul(flat, p.weight)
      .add(p.bias)
      .reshape([n, h, w, p.cout]) as tf.Tensor4D;
    if (p.gamma !== undefined && p.beta !== undefined) {
      // per-channel spatial normalisation keeps the deep stack away from
      // sigmoid saturation (the role batch norm plays in the reference net)
      const mean = out.mean([1, 2], true);
      const centred = out.sub(mean);
      const variance = centred.square().mean([1, 2], true);
      out = centred
        .div(variance.add(1e-5).sqrt())
        .mul(p.gamma)
        .add(p.beta) as tf.Tensor4D;
    }
    return out;
  });
}

function lrelu(x: tf.Tensor4D): tf.Tensor4D {
  return tf.leakyRelu(x, 0.2);
}

/** Pack 2x2 spatial blocks into channels (lossless downsample). */
function spaceToChannels(x: tf.Tensor4D): tf.Tensor4D {
  return tf.tidy(() => {
    const [n, h, w, c] = x.shape;
    return x
      .reshape([n, h / 2, 2, w / 2, 2, c])
      .transpose([0, 1, 3, 2, 4, 5])
      .reshape([n, h / 2, w / 2, 4 * c]) as tf.Tensor4D;
  });
}

/** Unpack channels into 2x2 spatial blocks (pixel-shuffle upsample). */
function channelsToSpace(x: tf.Tensor4D): tf.Tensor4D {
  return tf.tidy(() => {
    const [n, h, w, c] = x.shape;
    return x
      .reshape([n, h, w, 2, 2, c / 4])
      .transpose([0, 1, 3, 2, 4, 5])
      .reshape([n, 2 * h, 2 * w, c / 4]) as tf.Tensor4D;
  });
}

export class DipNetwork {
  readonly size: number;
  readonly nScales: number;
  readonly variables: tf.Variable[] = [];
  private enc: ConvParams[][] = [];
  private down: ConvParams[] = [];
  private up: ConvParams[] = [];
  private dec: ConvParams[][] = [];
  private head: ConvParams;

  constructor(options: NetworkOptions) {
    const { size } = options;
    // small inputs cannot host all seven scales; truncate the pyramid so
    // the bottom resolution stays at least 1x1 (full depth from 64x64 up)
    const nScales = Math.min(CHANNELS.length, Math.floor(Math.log2(size)) + 1);
    if (size % (1 << (nScales - 1)) !== 0) {
      throw new Error(
        `input size ${size} must be divisible by ${1 << (nScales - 1)}`,
      );
    }
    this.size = size;
    this.nScales = nScales;
    const rand = mulberry32(options.seed);

    let cin = 1;
    for (let s = 0; s < nScales; s++) {
      const c = CHANNELS[s];
      this.enc.push([
        makeConv(rand, 3, cin, c, this.variables, { normalise: true }),
        makeConv(rand, 3, c, c, this.variables, { normalise: true }),
      ]);
      if (s < nScales - 1) {
        // stride-2 stage: pack 2x2 blocks, then mix into the next width
        this.down.push(
          makeConv(rand, 1, 4 * c, CHANNELS[s + 1], this.variables, {
            normalise: true,
          }),
        );
        cin = CHANNELS[s + 1];
      }
    }
    for (let s = nScales - 2; s >= 0; s--) {
      const cAbove = s + 1 < nScales - 1 ? CHANNELS[s + 1] : CHANNELS[nScales - 1];
      const c = CHANNELS[s];
      this.up.push(
        makeConv(rand, 1, cAbove, 4 * c, this.variables, { normalise: true }),
      );
      this.dec.push([
        // the skip concatenation doubles the channel count
        makeConv(rand, 3, 2 * c, c, this.variables, { normalise: true }),
        makeConv(rand, 3, c, c, this.variables, { normalise: true }),
      ]);
    }
    // negative head bias starts the output near zero, matching the mostly
    // empty density maps and keeping the sigmoid away from saturation
    this.head = makeConv(rand, 1, CHANNELS[0], 1, this.variables, {
      biasInit: -2.0,
    });
  }

  get skipCount(): number {
    return this.nScales - 1;
  }

  forward(z: tf.Tensor4D): tf.Tensor4D {
    return tf.tidy(() => {
      let x = z;
      const skips: tf.Tensor4D[] = [];
      for (let s = 0; s < this.nScales; s++) {
        x = lrelu(conv(x, this.enc[s][0]));
        x = lrelu(conv(x, this.enc[s][1]));
        if (s < this.nScales - 1) {
          skips.push(x);
          x = lrelu(conv(spaceToChannels(x), this.down[s]));
        }
      }
      for (let i = 0; i < this.dec.length; i++) {
        const s = this.nScales - 2 - i;
        x = channelsToSpace(lrelu(conv(x, this.up[i])));
        x = tf.concat4d([x, skips[s]], 3);
        x = lrelu(conv(x, this.dec[i][0]));
        x = lrelu(conv(x, this.dec[i][1]));
      }
      return tf.sigmoid(conv(x, this.head)) as tf.Tensor4D;
    });
  }

  dispose(): void {
    for (const v of this.variables) {
      v.dispose();
    }
  }
}

export function buildDipNetwork(options: NetworkOptions): DipNetwork {
  return new DipNetwork(options);
}
