#!/usr/bin/env node
/** Recorder CLI: capture sessions and emit parity fixtures. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { DEFAULT_SETTINGS, GuidanceSettings } from "./guidance.js";
import { NpyDtype } from "./npy.js";
import { HttpPipeline, SyntheticPipeline, VelocityPipeline } from "./pipeline.js";
import { recordSession, writeParityPack } from "./record.js";

function parseShape(text: string): [number, number, number] {
  const parts = text.split(",").map((p) => parseInt(p.trim(), 10));
  if (parts.length !== 3 || parts.some((p) => !Number.isFinite(p) || p < 1)) {
    throw new Error(`bad shape '${text}'; expected C,H,W`);
  }
  return [parts[0], parts[1], parts[2]];
}

await yargs(hideBin(process.argv))
  .command(
    "record",
    "record a session into the replay-manifest format",
    (cmd) =>
      cmd
        .option("pipeline", { choices: ["synthetic", "http"] as const, default: "synthetic" })
        .option("url", { type: "string", default: "http://127.0.0.1:8040" })
        .option("out", { type: "string", demandOption: true })
        .option("steps", { type: "number", default: 20 })
        .option("seed", { type: "number", default: 0 })
        .option("shape", { type: "string", default: "4,16,16", describe: "C,H,W" })
        .option("dtype", { choices: ["float32", "float64"] as const, default: "float32" })
        .option("record-w", { type: "number", default: 7.5, describe: "guidance scale driving the recorded trajectory" })
        .option("record-mode", { type: "string", default: "cfg" })
        .option("compose", { type: "boolean", default: true, describe: "write reference compositions + config.json" })
        .option("w", { type: "number", default: DEFAULT_SETTINGS.w })
        .option("scale", { type: "number", default: DEFAULT_SETTINGS.filter_scale })
        .option("k", { type: "number", default: DEFAULT_SETTINGS.k })
        .option("rho-mode", { choices: ["paper-fixed", "manual"] as const, default: DEFAULT_SETTINGS.rho_mode })
        .option("rho", { type: "number" })
        .option("first-step", { choices: ["cfg", "uncond"] as const, default: DEFAULT_SETTINGS.first_step }),
    async (argv) => {
      const shape = parseShape(argv.shape);
      const settings: GuidanceSettings = {
        w: argv.w,
        filter_scale: argv.scale,
        k: argv.k,
        rho_mode: argv["rho-mode"],
        rho_manual: argv.rho ?? null,
        combination: 3,
        first_step: argv["first-step"],
      };
      const pipeline: VelocityPipeline =
        argv.pipeline === "http"
          ? new HttpPipeline({
              url: argv.url,
              seed: argv.seed,
              shape,
              recordW: argv["record-w"],
              recordMode: argv["record-mode"],
            })
          : new SyntheticPipeline(shape, argv.seed);
      const result = await recordSession(pipeline, {
        outDir: argv.out,
        steps: argv.steps,
        dtype: argv.dtype as NpyDtype,
        settings,
        compose: argv.compose,
      });
      console.log(
        `recorded ${result.tensorFiles} tensor files (+${result.composedFiles} composed) -> ${result.manifestPath}`,
      );
    },
  )
  .command(
    "parity-pack",
    "emit randomized single-step parity fixtures",
    (cmd) =>
      cmd
        .option("out", { type: "string", demandOption: true })
        .option("seed", { type: "number", default: 7 }),
    async (argv) => {
      const cases = writeParityPack(argv.out, argv.seed);
      console.log(`wrote ${cases.length} parity cases to ${argv.out}`);
    },
  )
  .demandCommand(1)
  .strict()
  .help()
  .parseAsync();
