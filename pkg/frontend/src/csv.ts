import { readFileSync } from 'node:fs';
import Papa from 'papaparse';

/** Column layout produced by the experiment harness. */
export const RESULT_COLUMNS = [
  'experiment',
  'sweep_param',
  'sweep_value',
  'estimator',
  'conv_kind',
  'tau1',
  'tau2',
  'n_seeds',
  'true_value',
  'mse',
  'bias_sq',
  'variance',
  'ci_low',
  'ci_high',
  'failures',
] as const;

export type ResultColumn = (typeof RESULT_COLUMNS)[number];

export interface ResultRow {
  experiment: string;
  sweep_param: string;
  sweep_value: number;
  estimator: string;
  conv_kind: string;
  tau1: string;
  tau2: string;
  n_seeds: number;
  true_value: number;
  mse: number;
  bias_sq: number;
  variance: number;
  ci_low: number;
  ci_high: number;
  failures: number;
}

export class SchemaError extends Error {}

const NUMERIC: ResultColumn[] = [
  'sweep_value',
  'n_seeds',
  'true_value',
  'mse',
  'bias_sq',
  'variance',
  'ci_low',
  'ci_high',
  'failures',
];

/**
 * Parse a harness results CSV. Raises SchemaError when expected columns are
 * missing (listing every missing one) or when the file has no data rows.
 */
export function parseResults(path: string): ResultRow[] {
  return parseResultsText(readFileSync(path, 'utf8'));
}

export function parseResultsText(text: string): ResultRow[] {
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaError(`CSV parse failed: ${parsed.errors[0].message}`);
  }
  const header = parsed.meta.fields ?? [];
  const missing = RESULT_COLUMNS.filter((c) => !header.includes(c));
  if (missing.length > 0) {
    throw new SchemaError(`missing columns: ${missing.join(', ')}`);
  }
  if (parsed.data.length === 0) {
    throw new SchemaError('CSV contains no data rows');
  }
  return parsed.data.map((raw, i) => {
    const row: Record<string, string | number> = { ...raw };
    for (const col of NUMERIC) {
      const value = raw[col];
      // failed cells carry NaN statistics; keep them as NaN, not 0
      row[col] = value === '' ? NaN : Number(value);
      if (value !== '' && Number.isNaN(row[col]) && value.toLowerCase() !== 'nan') {
        throw new SchemaError(`row ${i + 1}: column ${col} is not numeric: ${value}`);
      }
    }
    return row as unknown as ResultRow;
  });
}
