/** Figure-spec files: a JSON list of panels, each naming its kind,
 *  input CSVs and style. Unknown keys and kinds are rejected. */

import { SchemaError } from "./csv.js";
import { FigureStyle } from "./figures.js";

export type FigureKind = "error_vs_k" | "ood_panel" | "probe_curve" | "scale_shift";

const KINDS: FigureKind[] = ["error_vs_k", "ood_panel", "probe_curve", "scale_shift"];

export interface FigureEntry {
  kind: FigureKind;
  /** eval/probe CSV paths (several are concatenated; ood_panel facets by transform) */
  inputs: string[];
  /** gd/gd++ table for probe_curve overlays */
  gd_table?: string;
  out: string;
  style?: FigureStyle;
}

export interface FigureSpec {
  figures: FigureEntry[];
}

const ENTRY_KEYS = new Set(["kind", "inputs", "gd_table", "out", "style"]);
const STYLE_KEYS = new Set(["logY", "width", "height", "title"]);

export function parseFigureSpec(doc: unknown): FigureSpec {
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new SchemaError("figure spec: root must be an object");
  }
  const root = doc as Record<string, unknown>;
  const unknown = Object.keys(root).filter((k) => k !== "figures");
  if (unknown.length > 0) {
    throw new SchemaError(`figure spec: unknown key(s) ${JSON.stringify(unknown)}`);
  }
  if (!Array.isArray(root.figures)) {
    throw new SchemaError("figure spec: 'figures' must be an array");
  }
  const figures = root.figures.map((raw, i) => {
    if (typeof raw !== "object" || raw === null) {
      throw new SchemaError(`figure ${i}: must be an object`);
    }
    const entry = raw as Record<string, unknown>;
    for (const key of Object.keys(entry)) {
      if (!ENTRY_KEYS.has(key)) {
        throw new SchemaError(`figure ${i}: unknown key ${JSON.stringify(key)}`);
      }
    }
    const kind = entry.kind as FigureKind;
    if (!KINDS.includes(kind)) {
      throw new SchemaError(`figure ${i}: unknown kind ${JSON.stringify(entry.kind)}`);
    }
    if (!Array.isArray(entry.inputs) || entry.inputs.some((p) => typeof p !== "string")) {
      throw new SchemaError(`figure ${i}: 'inputs' must be a list of CSV paths`);
    }
    if (typeof entry.out !== "string" || entry.out.length === 0) {
      throw new SchemaError(`figure ${i}: 'out' file name required`);
    }
    if (entry.style !== undefined) {
      for (const key of Object.keys(entry.style as object)) {
        if (!STYLE_KEYS.has(key)) {
          throw new SchemaError(`figure ${i}: unknown style key ${JSON.stringify(key)}`);
        }
      }
    }
    return {
      kind,
      inputs: entry.inputs as string[],
      gd_table: entry.gd_table as string | undefined,
      out: entry.out,
      style: entry.style as FigureStyle | undefined,
    };
  });
  return { figures };
}
