import { RESULT_COLUMNS, ResultColumn, ResultRow, SchemaError } from './csv.js';

/** What to draw: one panel per metric, one series per estimator config. */
export interface FigureSpec {
  input: string;
  xColumn: ResultColumn;
  metrics: ResultColumn[];
  logX: boolean;
  logY: boolean;
  output: string;
  title?: string;
}

export interface Point {
  x: number;
  y: number;
}

export interface Series {
  label: string;
  points: Point[];
}

export interface BandPoint {
  x: number;
  low: number;
  high: number;
  truth: number;
}

export interface BandSeries {
  label: string;
  points: BandPoint[];
}

export const DEFAULT_METRICS: ResultColumn[] = ['mse', 'bias_sq', 'variance'];

export function validateSpec(spec: FigureSpec): void {
  const referenced = [spec.xColumn, ...spec.metrics];
  const unknown = referenced.filter((c) => !RESULT_COLUMNS.includes(c));
  if (unknown.length > 0) {
    throw new SchemaError(`unknown columns: ${unknown.join(', ')}`);
  }
  if (spec.metrics.length === 0) {
    throw new SchemaError('at least one metric column is required');
  }
}

export function seriesLabel(row: ResultRow): string {
  // group by estimator configuration, never by the swept smoothing level
  return row.conv_kind === '' ? row.estimator : `${row.estimator}(${row.conv_kind})`;
}

/**
 * Group CSV rows into plottable series for one metric, preserving row
 * order within each series. No statistics are recomputed here: every
 * plotted number is a CSV cell.
 */
export function extractSeries(
  rows: ResultRow[],
  spec: FigureSpec,
  metric: ResultColumn,
): Series[] {
  const byLabel = new Map<string, Point[]>();
  for (const row of rows) {
    const label = seriesLabel(row);
    if (!byLabel.has(label)) byLabel.set(label, []);
    byLabel.get(label)!.push({
      x: row[spec.xColumn] as number,
      y: row[metric] as number,
    });
  }
  return [...byLabel.entries()].map(([label, points]) => ({ label, points }));
}

/**
 * The replication confidence interval around the mean estimate, plus the
 * oracle truth, for the estimate-scale panel.
 */
export function extractBands(rows: ResultRow[], spec: FigureSpec): BandSeries[] {
  const byLabel = new Map<string, BandPoint[]>();
  for (const row of rows) {
    const label = seriesLabel(row);
    if (!byLabel.has(label)) byLabel.set(label, []);
    byLabel.get(label)!.push({
      x: row[spec.xColumn] as number,
      low: row.ci_low,
      high: row.ci_high,
      truth: row.true_value,
    });
  }
  return [...byLabel.entries()].map(([label, points]) => ({ label, points }));
}
