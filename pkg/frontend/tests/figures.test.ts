import { mkdtempSync, readFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { parseResults, parseResultsText, RESULT_COLUMNS, SchemaError } from '../src/csv.js';
import {
  DEFAULT_METRICS,
  extractBands,
  extractSeries,
  FigureSpec,
  validateSpec,
} from '../src/figure.js';
import { extractPlottedValues, renderFigure } from '../src/render.js';
import { run } from '../src/cli.js';
import { fitLogLogSlope, fitSlope } from '../src/slope.js';

const TOY_CSV = join(__dirname, 'fixtures', 'toy.csv');
const SWEEP_CSV = join(__dirname, 'fixtures', 'n_logged_sweep.csv');

const toySpec: FigureSpec = {
  input: TOY_CSV,
  output: '/dev/null',
  xColumn: 'sweep_value',
  metrics: DEFAULT_METRICS,
  logX: false,
  logY: false,
};

describe('csv parsing', () => {
  it('parses the toy fixture with typed columns', () => {
    const rows = parseResults(TOY_CSV);
    expect(rows).toHaveLength(3);
    expect(rows[0].experiment).toBe('toy');
    expect(rows.map((r) => r.sweep_value)).toEqual([1, 2, 3]);
    expect(rows[0].true_value).toBeCloseTo(17.0, 12);
    expect(rows[2].bias_sq).toBeGreaterThan(15);
  });

  it('reports every missing column', () => {
    expect(() => parseResultsText('a,b\n1,2\n')).toThrowError(SchemaError);
    try {
      parseResultsText('experiment,mse\ntoy,1.0\n');
    } catch (err) {
      const msg = (err as Error).message;
      expect(msg).toContain('missing columns');
      expect(msg).toContain('bias_sq');
      expect(msg).toContain('variance');
      expect(msg).not.toContain(' mse');
    }
  });

  it('rejects an empty CSV', () => {
    expect(() => parseResultsText(RESULT_COLUMNS.join(',') + '\n')).toThrowError(
      /no data rows/,
    );
  });

  it('keeps failed-cell NaNs as NaN', () => {
    const header = RESULT_COLUMNS.join(',');
    const row = 'synthetic,beta,0,ips,,,,50,0.5,nan,nan,nan,nan,nan,30';
    const rows = parseResultsText(`${header}\n${row}\n`);
    expect(rows[0].mse).toBeNaN();
    expect(rows[0].failures).toBe(30);
  });
});

describe('series extraction', () => {
  it('round-trips every CSV number into the series', () => {
    const rows = parseResults(TOY_CSV);
    const series = extractSeries(rows, toySpec, 'mse');
    expect(series).toHaveLength(1);
    expect(series[0].label).toBe('pc-ips(tree)');
    expect(series.flatMap((s) => s.points.map((p) => p.y))).toEqual(rows.map((r) => r.mse));
  });

  it('splits series by estimator configuration', () => {
    const rows = parseResults(SWEEP_CSV);
    const series = extractSeries(rows, { ...toySpec, input: SWEEP_CSV }, 'mse');
    expect(series).toHaveLength(1);
    expect(series[0].label).toBe('ips');
    expect(series[0].points.map((p) => p.x)).toEqual([100, 1000, 10000]);
  });

  it('extracts CI bands from the CSV columns untouched', () => {
    const rows = parseResults(TOY_CSV);
    const bands = extractBands(rows, toySpec);
    expect(bands[0].points.map((p) => p.low)).toEqual(rows.map((r) => r.ci_low));
    expect(bands[0].points.map((p) => p.high)).toEqual(rows.map((r) => r.ci_high));
    expect(bands[0].points.every((p) => p.truth === 17.0)).toBe(true);
  });

  it('rejects unknown columns in the spec', () => {
    expect(() =>
      validateSpec({ ...toySpec, metrics: ['mse', 'squiggle' as never] }),
    ).toThrowError(/unknown columns: squiggle/);
    expect(() => validateSpec({ ...toySpec, metrics: [] })).toThrowError(SchemaError);
  });
});

describe('rendering', () => {
  function renderToy(): string {
    const rows = parseResults(TOY_CSV);
    const panels = DEFAULT_METRICS.map((metric) => ({
      metric,
      series: extractSeries(rows, toySpec, metric),
    }));
    return renderFigure(toySpec, panels, extractBands(rows, toySpec));
  }

  it('produces one panel per metric plus the CI panel', () => {
    const svg = renderToy();
    expect(svg.startsWith('<svg')).toBe(true);
    expect(svg.match(/class="panel"/g)).toHaveLength(4);
    expect(svg).toContain('class="ci-band"');
    expect(svg).toContain('data-metric="mse"');
  });

  it('round-trips plotted values exactly against the CSV', () => {
    const rows = parseResults(TOY_CSV);
    const plotted = extractPlottedValues(renderToy());
    for (const metric of DEFAULT_METRICS) {
      const panel = plotted.get(metric)!;
      const points = [...panel.values()].flat();
      expect(points.map((p) => p.x)).toEqual(rows.map((r) => r.sweep_value));
      expect(points.map((p) => p.y)).toEqual(rows.map((r) => r[metric] as number));
    }
  });

  it('is deterministic', () => {
    expect(renderToy()).toBe(renderToy());
  });

  it('handles log-log axes without dropping points', () => {
    const rows = parseResults(SWEEP_CSV);
    const spec = { ...toySpec, input: SWEEP_CSV, logX: true, logY: true };
    const panels = [{ metric: 'mse' as const, series: extractSeries(rows, spec, 'mse') }];
    const svg = renderFigure(spec, panels, extractBands(rows, spec));
    const plotted = extractPlottedValues(svg).get('mse')!;
    expect([...plotted.values()].flat()).toHaveLength(3);
    expect(svg).toContain('(log)');
  });

  it('cli run() writes a figure end to end', () => {
    const out = join(mkdtempSync(join(tmpdir(), 'fig-')), 'toy.svg');
    run({ ...toySpec, output: out });
    const svg = readFileSync(out, 'utf8');
    expect(svg).toContain('</svg>');
  });
});

describe('slope fitting', () => {
  it('recovers an exact line', () => {
    const pts = [1, 2, 3, 4].map((x) => ({ x, y: 3 - 2 * x }));
    expect(fitSlope(pts)).toBeCloseTo(-2, 12);
  });

  it('rejects degenerate input', () => {
    expect(() => fitSlope([{ x: 1, y: 1 }])).toThrowError();
    expect(() =>
      fitSlope([
        { x: 1, y: 1 },
        { x: 1, y: 2 },
      ]),
    ).toThrowError();
  });

  it('measures 1/n decay on the sample-size sweep near slope -1', () => {
    const rows = parseResults(SWEEP_CSV);
    const spec = { ...toySpec, input: SWEEP_CSV };
    const [series] = extractSeries(rows, spec, 'mse');
    const slope = fitLogLogSlope(series.points);
    expect(slope).toBeGreaterThan(-1.2);
    expect(slope).toBeLessThan(-0.8);
  });
});
