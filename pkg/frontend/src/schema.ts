/** Column contracts for the CSVs published by the experiment harness. */

import { ColumnSpec, parseCsv, validateTable } from "./csv.js";

export const SCHEMA_VERSION = 1;

export interface EvalRow {
  schema_version: number;
  model: string;
  family: string;
  distribution: string;
  transform: string;
  k: number;
  k_train: number;
  seed: number;
  n_tasks: number;
  mse_over_d: number;
}

export const EVAL_COLUMNS: ColumnSpec[] = [
  { name: "schema_version", kind: "int" },
  { name: "model", kind: "string" },
  { name: "family", kind: "string" },
  { name: "distribution", kind: "string" },
  { name: "transform", kind: "string" },
  { name: "k", kind: "int" },
  { name: "k_train", kind: "int" },
  { name: "seed", kind: "int" },
  { name: "n_tasks", kind: "int" },
  { name: "mse_over_d", kind: "float" },
];

export interface ProbeRow {
  schema_version: number;
  model: string;
  distribution: string;
  k: number;
  layer_index: number;
  layer_ratio: number;
  calibrated_mse_over_d: number;
  a_mean: number;
  a_var: number;
  b_mean: number;
  b_var: number;
}

export const PROBE_COLUMNS: ColumnSpec[] = [
  { name: "schema_version", kind: "int" },
  { name: "model", kind: "string" },
  { name: "distribution", kind: "string" },
  { name: "k", kind: "int" },
  { name: "layer_index", kind: "int" },
  { name: "layer_ratio", kind: "float" },
  { name: "calibrated_mse_over_d", kind: "float" },
  { name: "a_mean", kind: "float" },
  { name: "a_var", kind: "float" },
  { name: "b_mean", kind: "float" },
  { name: "b_var", kind: "float" },
];

export interface GdRow {
  schema_version: number;
  source: string;
  index: number;
  ratio: number;
  mse_over_d: number;
}

export const GD_COLUMNS: ColumnSpec[] = [
  { name: "schema_version", kind: "int" },
  { name: "source", kind: "string" },
  { name: "index", kind: "int" },
  { name: "ratio", kind: "float" },
  { name: "mse_over_d", kind: "float" },
];

export interface LossRow {
  schema_version: number;
  step: number;
  loss: number;
  lr: number;
  dims: number;
  k: number;
}

export const LOSS_COLUMNS: ColumnSpec[] = [
  { name: "schema_version", kind: "int" },
  { name: "step", kind: "int" },
  { name: "loss", kind: "float" },
  { name: "lr", kind: "float" },
  { name: "dims", kind: "int" },
  { name: "k", kind: "int" },
];

export function parseEvalCsv(text: string, label = "eval.csv"): EvalRow[] {
  return validateTable<EvalRow>(parseCsv(text), EVAL_COLUMNS, label);
}

export function parseProbeCsv(text: string, label = "probe.csv"): ProbeRow[] {
  return validateTable<ProbeRow>(parseCsv(text), PROBE_COLUMNS, label);
}

export function parseGdCsv(text: string, label = "gd_table.csv"): GdRow[] {
  return validateTable<GdRow>(parseCsv(text), GD_COLUMNS, label);
}

export function parseLossCsv(text: string, label = "loss.csv"): LossRow[] {
  return validateTable<LossRow>(parseCsv(text), LOSS_COLUMNS, label);
}
