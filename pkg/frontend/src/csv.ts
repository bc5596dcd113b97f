import { readFileSync } from "node:fs";
import Papa from "papaparse";

export type Row = Record<string, string>;

export class SchemaError extends Error {}

/**
 * Load one experiment CSV. Lines starting with `#` (the manifest reference
 * the primary pipeline writes) are skipped. Every figure declares the
 * columns it needs; a missing one raises a SchemaError naming it.
 */
export function loadCsv(path: string, requiredColumns: string[]): Row[] {
  const text = readFileSync(path, "utf-8");
  const parsed = Papa.parse<Row>(text, {
    header: true,
    comments: "#",
    skipEmptyLines: true,
  });
  const fields = parsed.meta.fields ?? [];
  for (const col of requiredColumns) {
    if (!fields.includes(col)) {
      throw new SchemaError(
        `${path}: missing required column '${col}' (found: ${fields.join(", ")})`,
      );
    }
  }
  return parsed.data;
}

export function num(row: Row, col: string): number {
  const v = Number(row[col]);
  if (Number.isNaN(v)) {
    throw new SchemaError(`column '${col}' holds non-numeric value '${row[col]}'`);
  }
  return v;
}

export function groupBy<T>(items: T[], key: (item: T) => string): Map<string, T[]> {
  const out = new Map<string, T[]>();
  for (const item of items) {
    const k = key(item);
    const bucket = out.get(k);
    if (bucket) bucket.push(item);
    else out.set(k, [item]);
  }
  return out;
}
