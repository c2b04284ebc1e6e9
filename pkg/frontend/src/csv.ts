/**
 * Minimal CSV reading plus column-contract validation for the lab's
 * metric files. Schema mismatches raise errors naming the offending
 * column so broken pipelines fail loudly.
 */

export class SchemaError extends Error {}

export interface Table {
  columns: string[];
  rows: string[][];
}

export function parseCsv(text: string): Table {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    return { columns: [], rows: [] };
  }
  const columns = lines[0].split(",");
  const rows = lines.slice(1).map((l) => l.split(","));
  for (const [i, row] of rows.entries()) {
    if (row.length !== columns.length) {
      throw new SchemaError(
        `row ${i + 2} has ${row.length} fields, header has ${columns.length}`,
      );
    }
  }
  return { columns, rows };
}

export type FieldKind = "string" | "int" | "float";

export interface ColumnSpec {
  name: string;
  kind: FieldKind;
}

/** Validate a table against an exact ordered column contract and convert
 *  each row into a typed record. */
export function validateTable<T>(table: Table, spec: ColumnSpec[], label: string): T[] {
  const expected = spec.map((c) => c.name);
  for (let i = 0; i < Math.max(expected.length, table.columns.length); i++) {
    if (table.columns[i] !== expected[i]) {
      const got = table.columns[i] ?? "<missing>";
      const want = expected[i] ?? "<none>";
      throw new SchemaError(
        `${label}: column ${i + 1} is ${JSON.stringify(got)}, expected ${JSON.stringify(want)}`,
      );
    }
  }
  return table.rows.map((row, r) => {
    const rec: Record<string, string | number> = {};
    for (const [i, col] of spec.entries()) {
      const raw = row[i];
      if (col.kind === "string") {
        rec[col.name] = raw;
        continue;
      }
      const value = Number(raw);
      if (!Number.isFinite(value)) {
        throw new SchemaError(`${label}: row ${r + 2}, column ${col.name}: ${JSON.stringify(raw)} is not a number`);
      }
      if (col.kind === "int" && !Number.isInteger(value)) {
        throw new SchemaError(`${label}: row ${r + 2}, column ${col.name}: ${JSON.stringify(raw)} is not an integer`);
      }
      rec[col.name] = value;
    }
    return rec as T;
  });
}
