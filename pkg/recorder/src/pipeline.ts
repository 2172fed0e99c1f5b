/**
 * Velocity-pair sources. A pipeline yields, per reverse step, the raw
 * unconditional and conditional model outputs before any guidance math —
 * the only point where guided updates can be recomposed offline.
 */

import { readNpy, Tensor, tensorOf } from "./npy.js";

export interface StepPair {
  t: number;
  vUc: Tensor;
  vC: Tensor;
}

export interface VelocityPipeline {
  readonly name: string;
  run(steps: number): Promise<StepPair[]>;
}

/** Deterministic uint32 PRNG (mulberry32). */
export function rng32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function gaussian(next: () => number): () => number {
  return () => {
    const u = Math.max(next(), 1e-12);
    const v = next();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  };
}

interface Blob {
  cy: number;
  cx: number;
  width: number;
  amps: number[];
}

function renderBlobs(shape: [number, number, number], blobs: Blob[], scale: number): Tensor {
  const [c, h, w] = shape;
  const out = tensorOf(shape);
  for (const blob of blobs) {
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const g = Math.exp(
          -((y - blob.cy) ** 2 + (x - blob.cx) ** 2) / (2 * blob.width * blob.width),
        );
        for (let ch = 0; ch < c; ch++) {
          out.data[(ch * h + y) * w + x] += scale * blob.amps[ch] * g;
        }
      }
    }
  }
  return out;
}

/**
 * Self-contained stand-in pipeline: per step, each term is a smoothly
 * drifting blob field plus small white noise, so the low-frequency bands
 * dominate and change maps carry real structure.
 */
export class SyntheticPipeline implements VelocityPipeline {
  readonly name: string;

  constructor(
    readonly shape: [number, number, number],
    readonly seed: number,
    readonly noise = 0.05,
  ) {
    this.name = `synthetic(seed=${seed}, shape=${shape.join("x")})`;
  }

  async run(steps: number): Promise<StepPair[]> {
    const next = rng32(this.seed);
    const gauss = gaussian(next);
    const [c] = this.shape;
    const makeBlobs = (count: number): Blob[] =>
      Array.from({ length: count }, () => ({
        cy: (0.2 + 0.6 * next()) * this.shape[1],
        cx: (0.2 + 0.6 * next()) * this.shape[2],
        width: (0.25 + 0.3 * next()) * Math.min(this.shape[1], this.shape[2]),
        amps: Array.from({ length: c }, () => 2 * next() - 1),
      }));
    const baseUc = makeBlobs(3);
    const baseC = makeBlobs(3);
    const drift = Array.from({ length: 4 }, () => 0.5 + next());

    const pairs: StepPair[] = [];
    for (let i = 0; i < steps; i++) {
      const t = (steps - i) / steps;
      const phase = 1 - t;
      const vUc = renderBlobs(this.shape, baseUc, Math.sin(drift[0] + drift[1] * phase));
      const vC = renderBlobs(this.shape, baseC, Math.cos(drift[2] + drift[3] * phase));
      for (let j = 0; j < vUc.data.length; j++) {
        vUc.data[j] += this.noise * gauss();
        vC.data[j] += this.noise * gauss();
      }
      pairs.push({ t, vUc, vC });
    }
    return pairs;
  }
}

interface SampleRunTensors {
  t: number;
  v_uc_npy_b64: string;
  v_c_npy_b64: string;
}

export interface HttpPipelineOptions {
  url: string;
  seed: number;
  shape: [number, number, number];
  recordW: number;
  recordMode: string;
}

/**
 * Captures pairs from a running guidance-lab service: one /sample request
 * with tensor recording enabled; the trajectory evolves under the
 * record-time guidance settings while the captured tensors stay raw.
 */
export class HttpPipeline implements VelocityPipeline {
  readonly name: string;

  constructor(readonly options: HttpPipelineOptions) {
    this.name = `service(${options.url}, seed=${options.seed}, w=${options.recordW}, mode=${options.recordMode})`;
  }

  async run(steps: number): Promise<StepPair[]> {
    const [channels, height, width] = this.options.shape;
    const request = {
      config: {
        backend: {
          kind: "analytic",
          testbed: { channels, height, width },
          condition: 0,
        },
        guidance: { w: this.options.recordW, mode: this.options.recordMode },
        steps,
        seeds: [this.options.seed],
      },
      record_tensors: true,
      keep_images: false,
    };
    const response = await fetch(`${this.options.url}/sample`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) {
      throw new Error(`service error ${response.status}: ${(await response.text()).slice(0, 300)}`);
    }
    const body = (await response.json()) as { runs: { tensors: SampleRunTensors[] }[] };
    const tensors = body.runs[0]?.tensors;
    if (!tensors || tensors.length !== steps) {
      throw new Error(`service returned ${tensors?.length ?? 0} steps, expected ${steps}`);
    }
    return tensors.map((step) => ({
      t: step.t,
      vUc: readNpy(Buffer.from(step.v_uc_npy_b64, "base64")),
      vC: readNpy(Buffer.from(step.v_c_npy_b64, "base64")),
    }));
  }
}
