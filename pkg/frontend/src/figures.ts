/**
 * The four figure kinds rendered from harness CSVs:
 *
 * - error_vs_k: per-seed error curves over context length with a dashed
 *   marker at the training length;
 * - ood_panel: error_vs_k faceted by transform tag;
 * - probe_curve: calibrated per-layer error on the layer-ratio axis with
 *   optional gd/gd++ iterate overlays;
 * - scale_shift: fitted probe scale/shift statistics across layers.
 */

import { EvalRow, GdRow, ProbeRow } from "./schema.js";
import { Chart, PALETTE, SeriesStyle, fmt, linearScale, logScale, logTicks, niceLinearTicks } from "./svg.js";

export interface FigureStyle {
  logY?: boolean; // default true for error plots
  width?: number;
  height?: number;
  title?: string;
}

const BASELINE_STYLES: Record<string, SeriesStyle> = {
  least_squares: { color: "#333333", dash: "6,3", width: 1.2 },
  lasso: { color: "#666666", dash: "2,3", width: 1.2 },
  averaging: { color: "#999999", dash: "8,2,2,2", width: 1.2 },
  knn3: { color: "#777777", dash: "1,3", width: 1.2 },
  zero: { color: "#bbbbbb", dash: "4,4", width: 1 },
};

function modelColor(name: string, index: number): string {
  return PALETTE[index % PALETTE.length];
}

function groupBy<T, K extends keyof T>(rows: T[], key: K): Map<T[K], T[]> {
  const out = new Map<T[K], T[]>();
  for (const r of rows) {
    const k = r[key];
    const list = out.get(k);
    if (list) list.push(r);
    else out.set(k, [r]);
  }
  return out;
}

/** Floor for log plots: keep machine-zero baseline errors drawable. */
function positiveFloor(values: number[]): number {
  const pos = values.filter((v) => v > 0);
  if (pos.length === 0) return 1e-12;
  return Math.min(...pos);
}

function errorAxis(chart: Chart, values: number[], logY: boolean) {
  const y0 = positiveFloor(values);
  let lo = Math.max(y0 * 0.8, 1e-12);
  let hi = Math.max(...values, lo * 10) * 1.2;
  if (logY) {
    const scale = logScale(lo, hi, chart.plot.y0, chart.plot.y1);
    return { scale, ticks: logTicks(lo, hi), clamp: (v: number) => Math.max(v, lo) };
  }
  lo = Math.min(0, ...values);
  const scale = linearScale(lo, hi, chart.plot.y0, chart.plot.y1);
  return { scale, ticks: niceLinearTicks(lo, hi), clamp: (v: number) => v };
}

export function renderErrorVsK(rows: EvalRow[], style: FigureStyle = {}): string {
  const chart = new Chart(style.width ?? 560, style.height ?? 380);
  if (rows.length === 0) {
    chart.frame();
    chart.title(style.title ?? "error vs. context length");
    chart.note("no data");
    return chart.render();
  }
  const logY = style.logY ?? true;
  chart.title(style.title ?? `${rows[0].distribution} (${rows[0].transform})`);

  const ks = rows.map((r) => r.k);
  const xScale = linearScale(Math.min(...ks), Math.max(...ks), chart.plot.x0, chart.plot.x1);
  const { scale: yScale, ticks, clamp } = errorAxis(chart, rows.map((r) => r.mse_over_d), logY);

  chart.frame();
  chart.xAxis(xScale, niceLinearTicks(Math.min(...ks), Math.max(...ks)).filter(Number.isInteger), "in-context examples k");
  chart.yAxis(yScale, ticks, "MSE / d");

  // per-seed lines, one hue per model; baselines in fixed gray styles
  const legend: { label: string; style: SeriesStyle }[] = [];
  const models = [...groupBy(rows, "model").entries()];
  let colorIndex = 0;
  for (const [model, modelRows] of models) {
    const isBaseline = modelRows[0].family === "baseline";
    const base = isBaseline
      ? BASELINE_STYLES[model] ?? { color: "#555", dash: "5,3", width: 1.2 }
      : { color: modelColor(model, colorIndex++), width: 1.5 };
    const seeds = [...groupBy(modelRows, "seed").entries()];
    for (const [, seedRows] of seeds) {
      const sorted = [...seedRows].sort((a, b) => a.k - b.k);
      chart.line(
        sorted.map((r) => xScale(r.k)),
        sorted.map((r) => yScale(clamp(r.mse_over_d))),
        { ...base, opacity: isBaseline || seeds.length === 1 ? 1 : 0.85, marker: !isBaseline },
      );
    }
    legend.push({ label: model, style: base });
  }

  const kTrain = rows.find((r) => r.k_train > 0)?.k_train;
  if (kTrain !== undefined) {
    chart.verticalMarker(xScale(kTrain), `k_train = ${kTrain}`);
  }
  chart.legend(legend);
  return chart.render();
}

export function renderOodPanel(rowsByTransform: Map<string, EvalRow[]>, style: FigureStyle = {}): string {
  // facet horizontally, shared y label
  const cellW = style.width ?? 400;
  const cellH = style.height ?? 330;
  const panels: string[] = [];
  let x = 0;
  for (const [transform, rows] of rowsByTransform) {
    const svg = renderErrorVsK(rows, { ...style, width: cellW, height: cellH, title: transform });
    const inner = svg.replace(/^<svg[^>]*>/, "").replace(/<\/svg>\s*$/, "");
    panels.push(`<g transform="translate(${x},0)">${inner}</g>`);
    x += cellW;
  }
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${x}" height="${cellH}" viewBox="0 0 ${x} ${cellH}" ` +
    `font-family="Helvetica, Arial, sans-serif">\n` +
    panels.join("\n") +
    "\n</svg>\n"
  );
}

export function renderProbeCurve(rows: ProbeRow[], gdRows: GdRow[] = [], style: FigureStyle = {}): string {
  const chart = new Chart(style.width ?? 560, style.height ?? 380);
  if (rows.length === 0) {
    chart.frame();
    chart.title(style.title ?? "probe curve");
    chart.note("no data");
    return chart.render();
  }
  const logY = style.logY ?? true;
  chart.title(style.title ?? `layer-wise probe, ${rows[0].distribution}, k=${rows[0].k}`);

  // layer-ratio axis spans [0, 1] by contract
  const xScale = linearScale(0, 1, chart.plot.x0, chart.plot.x1);
  const all = rows.map((r) => r.calibrated_mse_over_d).concat(gdRows.map((r) => r.mse_over_d));
  const { scale: yScale, ticks, clamp } = errorAxis(chart, all, logY);

  chart.frame();
  chart.xAxis(xScale, [0, 0.25, 0.5, 0.75, 1.0], "layer ratio (layer / depth)");
  chart.yAxis(yScale, ticks, "calibrated MSE / d");

  const legend: { label: string; style: SeriesStyle }[] = [];
  let colorIndex = 0;
  for (const [key, group] of groupBy(rows, "model")) {
    const s: SeriesStyle = { color: modelColor(String(key), colorIndex++), width: 1.6, marker: true };
    const sorted = [...group].sort((a, b) => a.layer_ratio - b.layer_ratio);
    chart.line(
      sorted.map((r) => xScale(r.layer_ratio)),
      sorted.map((r) => yScale(clamp(r.calibrated_mse_over_d))),
      s,
    );
    legend.push({ label: `${key} (layers)`, style: s });
  }
  const overlayStyles: Record<string, SeriesStyle> = {
    gd: { color: "#333", dash: "6,3", width: 1.3 },
    gd_pp: { color: "#888", dash: "2,3", width: 1.3 },
  };
  for (const [source, group] of groupBy(gdRows, "source")) {
    if (group[0].index !== undefined && rows.some((r) => r.model === source)) continue;
    const s = overlayStyles[String(source)] ?? { color: "#555", dash: "4,3" };
    const sorted = [...group].sort((a, b) => a.ratio - b.ratio);
    chart.line(
      sorted.map((r) => xScale(r.ratio)),
      sorted.map((r) => yScale(clamp(r.mse_over_d))),
      s,
    );
    legend.push({ label: `${source} (iterations)`, style: s });
  }
  chart.legend(legend);
  return chart.render();
}

export function renderScaleShift(rows: ProbeRow[], style: FigureStyle = {}): string {
  const W = style.width ?? 560;
  const H = style.height ?? 300;
  if (rows.length === 0) {
    const chart = new Chart(W, H);
    chart.frame();
    chart.title(style.title ?? "probe scale and shift");
    chart.note("no data");
    return chart.render();
  }
  const panels: string[] = [];
  const fields: ["a" | "b", string, number][] = [
    ["a", "scale a (fitted)", 1],
    ["b", "shift b (fitted)", 0],
  ];
  let xoff = 0;
  for (const [field, label, target] of fields) {
    const chart = new Chart(W / 2, H);
    chart.title(label);
    const xScale = linearScale(0, 1, chart.plot.x0, chart.plot.x1);
    const means = rows.map((r) => (field === "a" ? r.a_mean : r.b_mean));
    const sds = rows.map((r) => Math.sqrt(field === "a" ? r.a_var : r.b_var));
    const lo = Math.min(...means.map((m, i) => m - sds[i]), target) - 0.1;
    const hi = Math.max(...means.map((m, i) => m + sds[i]), target) + 0.1;
    const yScale = linearScale(lo, hi, chart.plot.y0, chart.plot.y1);
    chart.frame();
    chart.xAxis(xScale, [0, 0.5, 1.0], "layer ratio");
    chart.yAxis(yScale, niceLinearTicks(lo, hi, 5), label);
    // reference: scale -> 1, shift -> 0 across depth
    chart.line(
      [chart.plot.x0, chart.plot.x1],
      [yScale(target), yScale(target)],
      { color: "#999", dash: "4,4", width: 1 },
    );
    let colorIndex = 0;
    for (const [model, group] of groupBy(rows, "model")) {
      const sorted = [...group].sort((a, b) => a.layer_ratio - b.layer_ratio);
      const color = modelColor(String(model), colorIndex++);
      const xs = sorted.map((r) => xScale(r.layer_ratio));
      const mu = sorted.map((r) => (field === "a" ? r.a_mean : r.b_mean));
      const sd = sorted.map((r) => Math.sqrt(field === "a" ? r.a_var : r.b_var));
      chart.band(xs, mu.map((m, i) => yScale(m - sd[i])), mu.map((m, i) => yScale(m + sd[i])), color);
      chart.line(xs, mu.map((m) => yScale(m)), { color, width: 1.6, marker: true });
    }
    const inner = chart.render().replace(/^<svg[^>]*>/, "").replace(/<\/svg>\s*$/, "");
    panels.push(`<g transform="translate(${xoff},0)">${inner}</g>`);
    xoff += W / 2;
  }
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}" ` +
    `font-family="Helvetica, Arial, sans-serif">\n` +
    panels.join("\n") +
    "\n</svg>\n"
  );
}

/** Final-context-length errors per (model, seed): the textual summary
 *  printed alongside the panels. */
export function summaryTable(rows: EvalRow[]): string[][] {
  const out: string[][] = [["model", "seed", "k", "mse_over_d"]];
  for (const [model, modelRows] of groupBy(rows, "model")) {
    for (const [seed, seedRows] of groupBy(modelRows, "seed")) {
      const maxK = Math.max(...seedRows.map((r) => r.k));
      const last = seedRows.find((r) => r.k === maxK)!;
      out.push([String(model), String(seed), String(maxK), fmt(last.mse_over_d)]);
    }
  }
  return out;
}
