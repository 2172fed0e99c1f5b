/**
 * Independent transcription of the guided update used for parity checks.
 *
 * The pipeline per step: split both velocity terms into low + high parts with
 * a box-average downsample and bilinear upsample (align-corners-false, border
 * clamped, high part is the residual); build per-term change maps against the
 * previous step's low parts (Euclidean distance across channels per
 * location); threshold at mean + k*std (population std, strict <) to get the
 * low-change masks; down-weight the masked low-frequency signal by rho; and
 * recombine with the down-weighting inside the scaled difference term while
 * the high-frequency parts receive plain guidance.
 *
 * Everything computes in float64 with plain loops; this is deliberately not a
 * port of any particular array library.
 */

import { Tensor, tensorOf } from "./npy.js";

export interface GuidanceSettings {
  w: number;
  filter_scale: number;
  k: number;
  rho_mode: "paper-fixed" | "manual";
  rho_manual?: number | null;
  combination: number;
  first_step: "cfg" | "uncond";
}

export const DEFAULT_SETTINGS: GuidanceSettings = {
  w: 7.5,
  filter_scale: 8,
  k: 1.0,
  rho_mode: "paper-fixed",
  rho_manual: null,
  combination: 3,
  first_step: "uncond",
};

const PAPER_FIXED_RHO: Record<number, number> = {
  1: 0.333 / 0.667,
  2: 0.1 / 0.9,
  3: 0.01 / 0.99,
};

export function boxDownsample(t: Tensor, scale: number): Tensor {
  const [c, h, w] = t.shape;
  const hc = Math.ceil(h / scale);
  const wc = Math.ceil(w / scale);
  const out = tensorOf([c, hc, wc]);
  for (let ch = 0; ch < c; ch++) {
    for (let i = 0; i < hc; i++) {
      const y0 = i * scale;
      const y1 = Math.min(y0 + scale, h);
      for (let j = 0; j < wc; j++) {
        const x0 = j * scale;
        const x1 = Math.min(x0 + scale, w);
        let sum = 0;
        for (let y = y0; y < y1; y++) {
          for (let x = x0; x < x1; x++) {
            sum += t.data[(ch * h + y) * w + x];
          }
        }
        out.data[(ch * hc + i) * wc + j] = sum / ((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

export function bilinearUpsample(coarse: Tensor, h: number, w: number): Tensor {
  const [c, hc, wc] = coarse.shape;
  const out = tensorOf([c, h, w]);
  const ys = new Array<[number, number, number]>(h);
  for (let y = 0; y < h; y++) {
    let pos = (y + 0.5) * (hc / h) - 0.5;
    pos = Math.min(Math.max(pos, 0), hc - 1);
    const i0 = Math.min(Math.floor(pos), hc - 1);
    ys[y] = [i0, Math.min(i0 + 1, hc - 1), pos - i0];
  }
  const xs = new Array<[number, number, number]>(w);
  for (let x = 0; x < w; x++) {
    let pos = (x + 0.5) * (wc / w) - 0.5;
    pos = Math.min(Math.max(pos, 0), wc - 1);
    const j0 = Math.min(Math.floor(pos), wc - 1);
    xs[x] = [j0, Math.min(j0 + 1, wc - 1), pos - j0];
  }
  for (let ch = 0; ch < c; ch++) {
    for (let y = 0; y < h; y++) {
      const [i0, i1, fy] = ys[y];
      for (let x = 0; x < w; x++) {
        const [j0, j1, fx] = xs[x];
        const a = coarse.data[(ch * hc + i0) * wc + j0];
        const b = coarse.data[(ch * hc + i0) * wc + j1];
        const cc = coarse.data[(ch * hc + i1) * wc + j0];
        const d = coarse.data[(ch * hc + i1) * wc + j1];
        const top = a + fx * (b - a);
        const bottom = cc + fx * (d - cc);
        out.data[(ch * h + y) * w + x] = top + fy * (bottom - top);
      }
    }
  }
  return out;
}

export function lowpass(t: Tensor, scale: number): Tensor {
  if (scale === 1) return { shape: t.shape, data: Float64Array.from(t.data) };
  return bilinearUpsample(boxDownsample(t, scale), t.shape[1], t.shape[2]);
}

export function splitBands(t: Tensor, scale: number): { low: Tensor; high: Tensor } {
  const low = lowpass(t, scale);
  const high = tensorOf(t.shape);
  for (let i = 0; i < t.data.length; i++) high.data[i] = t.data[i] - low.data[i];
  return { low, high };
}

/** Euclidean distance across channels per spatial location (H*W map). */
export function changeMap(prevLow: Tensor, currLow: Tensor): Float64Array {
  const [c, h, w] = currLow.shape;
  const out = new Float64Array(h * w);
  for (let p = 0; p < h * w; p++) {
    let sum = 0;
    for (let ch = 0; ch < c; ch++) {
      const d = currLow.data[ch * h * w + p] - prevLow.data[ch * h * w + p];
      sum += d * d;
    }
    out[p] = Math.sqrt(sum);
  }
  return out;
}

export function meanStdThreshold(map: Float64Array, k: number): number {
  let mean = 0;
  for (let i = 0; i < map.length; i++) mean += map[i];
  mean /= map.length;
  let variance = 0;
  for (let i = 0; i < map.length; i++) {
    const d = map[i] - mean;
    variance += d * d;
  }
  variance /= map.length;
  return mean + k * Math.sqrt(variance);
}

export function lowChangeMask(map: Float64Array, gamma: number): Float64Array {
  const mask = new Float64Array(map.length);
  for (let i = 0; i < map.length; i++) mask[i] = map[i] < gamma ? 1 : 0;
  return mask;
}

export function maskFraction(mask: Float64Array): number {
  let ones = 0;
  for (let i = 0; i < mask.length; i++) ones += mask[i];
  return ones / mask.length;
}

export function rhoFor(settings: GuidanceSettings): number {
  if (settings.rho_mode === "manual") {
    if (settings.rho_manual == null) throw new Error("manual rho mode requires rho_manual");
    return settings.rho_manual;
  }
  const rho = PAPER_FIXED_RHO[settings.k];
  if (rho === undefined) throw new Error(`no fixed rho tabulated for k=${settings.k}`);
  return rho;
}

export function cfgUpdate(vUc: Tensor, vC: Tensor, w: number): Tensor {
  const out = tensorOf(vUc.shape);
  for (let i = 0; i < out.data.length; i++) {
    out.data[i] = vUc.data[i] + w * (vC.data[i] - vUc.data[i]);
  }
  return out;
}

/** One cached-step guided update (the down-weighting lives in the difference term). */
export function referenceGuidedStep(
  vUc: Tensor,
  vC: Tensor,
  prevUc: Tensor,
  prevC: Tensor,
  settings: GuidanceSettings,
): Tensor {
  if (settings.combination !== 3) {
    throw new Error("the reference implements combination 3 only");
  }
  const [c, h, w] = vUc.shape;
  const s = settings.filter_scale;
  const uc = splitBands(vUc, s);
  const cc = splitBands(vC, s);
  const prevLowUc = lowpass(prevUc, s);
  const prevLowC = lowpass(prevC, s);

  const rUc = changeMap(prevLowUc, uc.low);
  const rC = changeMap(prevLowC, cc.low);
  const mUc = lowChangeMask(rUc, meanStdThreshold(rUc, settings.k));
  const mC = lowChangeMask(rC, meanStdThreshold(rC, settings.k));
  const rho = rhoFor(settings);

  const out = tensorOf(vUc.shape);
  const plane = h * w;
  for (let ch = 0; ch < c; ch++) {
    for (let p = 0; p < plane; p++) {
      const idx = ch * plane + p;
      const lowUc = uc.low.data[idx];
      const lowC = cc.low.data[idx];
      const modUc = rho * lowUc * mUc[p] + lowUc * (1 - mUc[p]);
      const modC = rho * lowC * mC[p] + lowC * (1 - mC[p]);
      const low = lowUc + settings.w * (modC - modUc);
      const high = uc.high.data[idx] + settings.w * (cc.high.data[idx] - uc.high.data[idx]);
      out.data[idx] = low + high;
    }
  }
  return out;
}

/** Step statistics exposed for tests and session metadata. */
export function stepMaskFractions(
  vUc: Tensor,
  vC: Tensor,
  prevUc: Tensor,
  prevC: Tensor,
  settings: GuidanceSettings,
): { uc: number; c: number } {
  const s = settings.filter_scale;
  const rUc = changeMap(lowpass(prevUc, s), lowpass(vUc, s));
  const rC = changeMap(lowpass(prevC, s), lowpass(vC, s));
  return {
    uc: maskFraction(lowChangeMask(rUc, meanStdThreshold(rUc, settings.k))),
    c: maskFraction(lowChangeMask(rC, meanStdThreshold(rC, settings.k))),
  };
}
