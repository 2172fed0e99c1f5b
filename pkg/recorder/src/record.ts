/**
 * Session recording: drives a pipeline, stores one NPY pair per step plus a
 * manifest, and optionally writes reference compositions of the guided
 * update for cross-implementation parity.
 *
 * Tensors are narrowed to the storage precision before composing, so the
 * reference outputs correspond exactly to what a consumer of the files sees.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { cfgUpdate, DEFAULT_SETTINGS, GuidanceSettings, referenceGuidedStep } from "./guidance.js";
import { NpyDtype, Tensor, tensorOf, writeNpy } from "./npy.js";
import { rng32, gaussian, StepPair, VelocityPipeline } from "./pipeline.js";

export interface SessionOptions {
  outDir: string;
  steps: number;
  dtype: NpyDtype;
  settings: GuidanceSettings;
  compose: boolean;
  sourceNote?: string;
}

export interface SessionResult {
  manifestPath: string;
  tensorFiles: number;
  composedFiles: number;
}

function storagePrecision(t: Tensor, dtype: NpyDtype): Tensor {
  if (dtype === "float64") return t;
  const narrowed = Float32Array.from(t.data);
  const out = tensorOf(t.shape);
  for (let i = 0; i < out.data.length; i++) out.data[i] = narrowed[i];
  return out;
}

function writeFile(filePath: string, data: Buffer): void {
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  const tmp = path.join(path.dirname(filePath), `.${path.basename(filePath)}.tmp`);
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, filePath);
}

export async function recordSession(
  pipeline: VelocityPipeline,
  options: SessionOptions,
): Promise<SessionResult> {
  const pairs = await pipeline.run(options.steps);
  if (pairs.length !== options.steps) {
    throw new Error(`pipeline yielded ${pairs.length} steps, expected ${options.steps}`);
  }
  const stored: StepPair[] = pairs.map((pair) => ({
    t: pair.t,
    vUc: storagePrecision(pair.vUc, options.dtype),
    vC: storagePrecision(pair.vC, options.dtype),
  }));

  const steps: { t: number; v_uc: string; v_c: string }[] = [];
  stored.forEach((pair, i) => {
    const ucName = `v_uc_${String(i).padStart(3, "0")}.npy`;
    const cName = `v_c_${String(i).padStart(3, "0")}.npy`;
    writeFile(path.join(options.outDir, ucName), writeNpy(pair.vUc, options.dtype));
    writeFile(path.join(options.outDir, cName), writeNpy(pair.vC, options.dtype));
    steps.push({ t: pair.t, v_uc: ucName, v_c: cName });
  });

  const manifest = {
    version: 1,
    dtype: options.dtype,
    shape: stored[0].vUc.shape,
    steps,
    source: `${pipeline.name}${options.sourceNote ? "; " + options.sourceNote : ""}; raw pre-guidance velocity fields`,
  };
  const manifestPath = path.join(options.outDir, "manifest.json");
  writeFile(manifestPath, Buffer.from(JSON.stringify(manifest, null, 2) + "\n"));

  let composedFiles = 0;
  if (options.compose) {
    stored.forEach((pair, i) => {
      let composed: Tensor;
      if (i === 0) {
        composed =
          options.settings.first_step === "cfg"
            ? cfgUpdate(pair.vUc, pair.vC, options.settings.w)
            : { shape: pair.vUc.shape, data: Float64Array.from(pair.vUc.data) };
      } else {
        const prev = stored[i - 1];
        composed = referenceGuidedStep(pair.vUc, pair.vC, prev.vUc, prev.vC, options.settings);
      }
      const name = `composed_${String(i).padStart(3, "0")}.npy`;
      writeFile(path.join(options.outDir, name), writeNpy(composed, options.dtype));
      composedFiles += 1;
    });
    writeFile(
      path.join(options.outDir, "config.json"),
      Buffer.from(JSON.stringify(options.settings, null, 2) + "\n"),
    );
  }
  return { manifestPath, tensorFiles: stored.length * 2, composedFiles };
}

export interface ParityCase {
  name: string;
  dtype: NpyDtype;
  t: number;
  prev_t: number;
  w: number;
  filter_scale: number;
  k: number;
  rho_mode: "paper-fixed" | "manual";
  rho_manual: number | null;
  combination: number;
  files: Record<"v_uc" | "v_c" | "prev_uc" | "prev_c" | "expected", string>;
}

function smoothNoisyTensor(shape: [number, number, number], seed: number): Tensor {
  const next = rng32(seed);
  const gauss = gaussian(next);
  const [c, h, w] = shape;
  const out = tensorOf(shape);
  const blobs = Array.from({ length: 3 }, () => ({
    cy: (0.15 + 0.7 * next()) * h,
    cx: (0.15 + 0.7 * next()) * w,
    width: (0.2 + 0.3 * next()) * Math.min(h, w),
    amps: Array.from({ length: c }, () => 2 * next() - 1),
  }));
  for (const blob of blobs) {
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const g = Math.exp(-((y - blob.cy) ** 2 + (x - blob.cx) ** 2) / (2 * blob.width ** 2));
        for (let ch = 0; ch < c; ch++) {
          out.data[(ch * h + y) * w + x] += blob.amps[ch] * g;
        }
      }
    }
  }
  for (let i = 0; i < out.data.length; i++) out.data[i] += 0.1 * gauss();
  return out;
}

/** Randomized single-step fixtures plus expected outputs for several configs. */
export function writeParityPack(outDir: string, seed: number): ParityCase[] {
  const variants: Array<Partial<GuidanceSettings> & { name: string; shape: [number, number, number]; dtype: NpyDtype }> = [
    { name: "f32-defaults", shape: [4, 64, 64], dtype: "float32" },
    { name: "f32-w15-s4", shape: [4, 64, 64], dtype: "float32", w: 15, filter_scale: 4 },
    { name: "f32-k2-s2", shape: [4, 64, 64], dtype: "float32", k: 2, filter_scale: 2 },
    { name: "f32-small-manual-rho", shape: [4, 16, 16], dtype: "float32", rho_mode: "manual", rho_manual: 0.5 },
    { name: "f32-small-w1", shape: [4, 16, 16], dtype: "float32", w: 1.0 },
    { name: "f32-small-k3", shape: [4, 16, 16], dtype: "float32", k: 3 },
    { name: "f64-defaults", shape: [4, 64, 64], dtype: "float64" },
    { name: "f64-w15", shape: [4, 64, 64], dtype: "float64", w: 15 },
  ];

  const cases: ParityCase[] = [];
  variants.forEach((variant, index) => {
    const settings: GuidanceSettings = {
      ...DEFAULT_SETTINGS,
      ...Object.fromEntries(
        Object.entries(variant).filter(([key]) => !["name", "shape", "dtype"].includes(key)),
      ),
    };
    const base = seed + 1000 * index;
    const tensors = {
      v_uc: smoothNoisyTensor(variant.shape, base),
      v_c: smoothNoisyTensor(variant.shape, base + 1),
      prev_uc: smoothNoisyTensor(variant.shape, base + 2),
      prev_c: smoothNoisyTensor(variant.shape, base + 3),
    };
    const narrowed = Object.fromEntries(
      Object.entries(tensors).map(([key, tensor]) => [key, storagePrecision(tensor, variant.dtype)]),
    ) as Record<keyof typeof tensors, Tensor>;
    const expected = referenceGuidedStep(
      narrowed.v_uc,
      narrowed.v_c,
      narrowed.prev_uc,
      narrowed.prev_c,
      settings,
    );
    const files = {} as ParityCase["files"];
    for (const [key, tensor] of Object.entries({ ...narrowed, expected })) {
      const fileName = `${variant.name}_${key}.npy`;
      writeFile(path.join(outDir, fileName), writeNpy(tensor, variant.dtype));
      files[key as keyof ParityCase["files"]] = fileName;
    }
    cases.push({
      name: variant.name,
      dtype: variant.dtype,
      t: 0.5,
      prev_t: 0.55,
      w: settings.w,
      filter_scale: settings.filter_scale,
      k: settings.k,
      rho_mode: settings.rho_mode,
      rho_manual: settings.rho_manual ?? null,
      combination: settings.combination,
      files,
    });
  });
  writeFile(path.join(outDir, "cases.json"), Buffer.from(JSON.stringify(cases, null, 2) + "\n"));
  return cases;
}
