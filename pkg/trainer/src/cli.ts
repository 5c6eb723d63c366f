/**
 * Command line: `train --config cfg.json` trains a closure and exports MLCW
 * weights plus a JSON-lines report; `--lrrt lo:hi:steps` runs the
 * learning-rate range test instead and writes its (lr, loss) series.
 */

import * as fs from "node:fs";
import { parseArgs } from "node:util";

import { DEFAULT_CONFIG, lrrt, train, TrainConfig } from "./train.js";

function loadConfig(path: string): TrainConfig {
  const user = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (!user.datasets || !user.out) {
    throw new Error("config must provide 'datasets' and 'out'");
  }
  return { ...DEFAULT_CONFIG, ...user };
}

export function main(argv: string[]): number {
  const { values, positionals } = parseArgs({
    args: argv,
    allowPositionals: true,
    options: {
      config: { type: "string" },
      lrrt: { type: "string" },
    },
  });
  const command = positionals[0];
  if (command !== "train" || !values.config) {
    console.error("usage: cli train --config path.json [--lrrt lo:hi:steps]");
    return 2;
  }
  const cfg = loadConfig(values.config);
  if (values.lrrt) {
    const [lo, hi, steps] = values.lrrt.split(":").map(Number);
    const res = lrrt(cfg, lo, hi, Math.round(steps));
    const out = cfg.report ?? "lrrt.jsonl";
    fs.writeFileSync(
      out,
      res.lrs.map((lr, i) => JSON.stringify({ lr, loss: res.losses[i] })).join("\n") + "\n"
    );
    console.log(`lrrt: ${res.lrs.length} points${res.diverged ? " (diverged, truncated)" : ""} -> ${out}`);
    return 0;
  }
  const t0 = Date.now();
  const result = train(cfg);
  const last = result.reports[result.reports.length - 1];
  console.log(
    `trained ${cfg.epochs} epochs in ${((Date.now() - t0) / 1000).toFixed(1)}s; ` +
      `final train loss ${last.trainLoss.toExponential(3)}, ` +
      `test rel L2 ${(100 * last.testRelL2).toFixed(2)}% -> ${cfg.out}`
  );
  return 0;
}

process.exit(main(process.argv.slice(2)));
