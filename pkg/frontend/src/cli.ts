#!/usr/bin/env node
import { writeFileSync } from 'node:fs';
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { parseResults, ResultColumn, SchemaError } from './csv.js';
import { DEFAULT_METRICS, extractBands, extractSeries, FigureSpec, validateSpec } from './figure.js';
import { renderFigure } from './render.js';

export function run(spec: FigureSpec): void {
  validateSpec(spec);
  const rows = parseResults(spec.input);
  const panels = spec.metrics.map((metric) => ({
    metric,
    series: extractSeries(rows, spec, metric),
  }));
  const svg = renderFigure(spec, panels, extractBands(rows, spec));
  writeFileSync(spec.output, svg + '\n');
}

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .usage('Render an SVG figure from a results CSV')
    .option('input', { type: 'string', demandOption: true, describe: 'results CSV path' })
    .option('out', { type: 'string', demandOption: true, describe: 'output SVG path' })
    .option('x', { type: 'string', default: 'sweep_value', describe: 'x-axis column' })
    .option('metrics', {
      type: 'string',
      default: DEFAULT_METRICS.join(','),
      describe: 'comma-separated metric columns, one panel each',
    })
    .option('log-x', { type: 'boolean', default: false })
    .option('log-y', { type: 'boolean', default: false })
    .option('title', { type: 'string' })
    .strict()
    .parse();

  const spec: FigureSpec = {
    input: argv.input,
    output: argv.out,
    xColumn: argv.x as ResultColumn,
    metrics: argv.metrics.split(',').map((m) => m.trim() as ResultColumn),
    logX: argv['log-x'],
    logY: argv['log-y'],
    title: argv.title,
  };
  try {
    run(spec);
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`schema error: ${err.message}`);
      return 1;
    }
    throw err;
  }
  console.log(`wrote ${spec.output}`);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (invokedDirectly) {
  main().then((code) => {
    process.exitCode = code;
  });
}
