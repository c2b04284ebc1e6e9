#!/usr/bin/env node
/**
 * ssmlab-render: turn harness CSVs into SVG panels.
 *
 *   render --spec figures.json --out <dir>
 *
 * Every input CSV is schema-validated before rendering; empty CSVs
 * produce a "no data" placeholder panel and a zero exit.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { SchemaError } from "./csv.js";
import {
  renderErrorVsK,
  renderOodPanel,
  renderProbeCurve,
  renderScaleShift,
  summaryTable,
} from "./figures.js";
import { EvalRow, parseEvalCsv, parseGdCsv, parseProbeCsv } from "./schema.js";
import { FigureEntry, parseFigureSpec } from "./spec.js";

function readEvalInputs(entry: FigureEntry, specDir: string): EvalRow[] {
  const rows: EvalRow[] = [];
  for (const input of entry.inputs) {
    const p = path.resolve(specDir, input);
    rows.push(...parseEvalCsv(fs.readFileSync(p, "utf-8"), path.basename(p)));
  }
  return rows;
}

export function renderEntry(entry: FigureEntry, specDir: string): { svg: string; summary?: string[][] } {
  switch (entry.kind) {
    case "error_vs_k": {
      const rows = readEvalInputs(entry, specDir);
      return { svg: renderErrorVsK(rows, entry.style), summary: summaryTable(rows) };
    }
    case "ood_panel": {
      const rows = readEvalInputs(entry, specDir);
      const byTransform = new Map<string, EvalRow[]>();
      for (const r of rows) {
        const list = byTransform.get(r.transform) ?? [];
        list.push(r);
        byTransform.set(r.transform, list);
      }
      return { svg: renderOodPanel(byTransform, entry.style), summary: summaryTable(rows) };
    }
    case "probe_curve": {
      const rows = entry.inputs.flatMap((input) => {
        const p = path.resolve(specDir, input);
        return parseProbeCsv(fs.readFileSync(p, "utf-8"), path.basename(p));
      });
      const gdRows = entry.gd_table
        ? parseGdCsv(
            fs.readFileSync(path.resolve(specDir, entry.gd_table), "utf-8"),
            path.basename(entry.gd_table),
          )
        : [];
      return { svg: renderProbeCurve(rows, gdRows, entry.style) };
    }
    case "scale_shift": {
      const rows = entry.inputs.flatMap((input) => {
        const p = path.resolve(specDir, input);
        return parseProbeCsv(fs.readFileSync(p, "utf-8"), path.basename(p));
      });
      return { svg: renderScaleShift(rows, entry.style) };
    }
  }
}

export function main(argv: string[]): number {
  const args = argv.slice(2);
  if (args[0] !== "render") {
    console.error("usage: ssmlab-render render --spec <figures.json> --out <dir>");
    return 2;
  }
  let specPath = "";
  let outDir = "";
  for (let i = 1; i < args.length; i += 2) {
    if (args[i] === "--spec") specPath = args[i + 1];
    else if (args[i] === "--out") outDir = args[i + 1];
    else {
      console.error(`unknown argument ${args[i]}`);
      return 2;
    }
  }
  if (!specPath || !outDir) {
    console.error("both --spec and --out are required");
    return 2;
  }
  let spec;
  try {
    spec = parseFigureSpec(JSON.parse(fs.readFileSync(specPath, "utf-8")));
  } catch (err) {
    console.error(`figure spec error: ${(err as Error).message}`);
    return 2;
  }
  fs.mkdirSync(outDir, { recursive: true });
  const specDir = path.dirname(path.resolve(specPath));
  for (const entry of spec.figures) {
    try {
      const { svg, summary } = renderEntry(entry, specDir);
      const outPath = path.join(outDir, entry.out);
      fs.writeFileSync(outPath, svg);
      console.log(`wrote ${outPath}`);
      if (summary) {
        const text = summary.map((row) => row.join(",")).join("\n") + "\n";
        const summaryPath = outPath.replace(/\.svg$/, "") + ".summary.csv";
        fs.writeFileSync(summaryPath, text);
        console.log(`wrote ${summaryPath}`);
      }
    } catch (err) {
      if (err instanceof SchemaError) {
        console.error(`schema error in ${entry.out}: ${err.message}`);
        return 2;
      }
      throw err;
    }
  }
  return 0;
}

const isMain = process.argv[1] !== undefined && import.meta.url.endsWith(path.basename(process.argv[1]));
if (isMain) {
  process.exit(main(process.argv));
}
