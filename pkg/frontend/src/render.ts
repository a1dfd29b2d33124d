import { ResultColumn } from './csv.js';
import { BandSeries, FigureSpec, Series } from './figure.js';

const PANEL_W = 320;
const PANEL_H = 260;
const MARGIN = { top: 36, right: 16, bottom: 44, left: 60 };
const COLORS = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b'];

interface Scale {
  (v: number): number;
  ticks: number[];
}

function niceTicks(lo: number, hi: number, count = 5): number[] {
  if (!(hi > lo)) return [lo];
  const step = Math.pow(10, Math.floor(Math.log10((hi - lo) / count)));
  const candidates = [step, 2 * step, 5 * step, 10 * step];
  const chosen = candidates.find((s) => (hi - lo) / s <= count) ?? 10 * step;
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / chosen) * chosen; t <= hi + 1e-12 * chosen; t += chosen) {
    ticks.push(Number(t.toPrecision(12)));
  }
  return ticks;
}

function logTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.floor(Math.log10(lo)); e <= Math.ceil(Math.log10(hi)); e++) {
    const t = Math.pow(10, e);
    if (t >= lo / 1.001 && t <= hi * 1.001) ticks.push(t);
  }
  return ticks.length >= 2 ? ticks : [lo, hi];
}

function makeScale(values: number[], range: [number, number], log: boolean): Scale {
  const finite = values.filter((v) => Number.isFinite(v) && (!log || v > 0));
  let lo = Math.min(...finite);
  let hi = Math.max(...finite);
  if (lo === hi) {
    lo = log ? lo / 2 : lo - 1;
    hi = log ? hi * 2 : hi + 1;
  }
  const [r0, r1] = range;
  const fwd = log
    ? (v: number) => r0 + ((Math.log(v) - Math.log(lo)) / (Math.log(hi) - Math.log(lo))) * (r1 - r0)
    : (v: number) => r0 + ((v - lo) / (hi - lo)) * (r1 - r0);
  const scale = fwd as Scale;
  scale.ticks = log ? logTicks(lo, hi) : niceTicks(lo, hi);
  return scale;
}

function fmt(v: number): string {
  if (v === 0) return '0';
  const abs = Math.abs(v);
  if (abs >= 0.01 && abs < 10000) return String(Number(v.toPrecision(4)));
  return v.toExponential(1);
}

const esc = (s: string) =>
  s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;').replace(/"/g, '&quot;');

function panel(
  x0: number,
  title: string,
  seriesList: Series[],
  bands: BandSeries[] | null,
  xLabel: string,
  logX: boolean,
  logY: boolean,
): string {
  const left = x0 + MARGIN.left;
  const right = x0 + PANEL_W - MARGIN.right;
  const top = MARGIN.top;
  const bottom = PANEL_H - MARGIN.bottom;

  const xs = seriesList.flatMap((s) => s.points.map((p) => p.x));
  const ys = seriesList.flatMap((s) => s.points.map((p) => p.y));
  if (bands) {
    for (const b of bands) for (const p of b.points) ys.push(p.low, p.high, p.truth);
  }
  const sx = makeScale(xs, [left, right], logX);
  const sy = makeScale(ys, [bottom, top], logY);

  const out: string[] = [];
  out.push(`<g class="panel" data-metric="${esc(title)}">`);
  out.push(
    `<rect x="${left}" y="${top}" width="${right - left}" height="${bottom - top}" fill="none" stroke="#999"/>`,
  );
  out.push(
    `<text x="${(left + right) / 2}" y="${top - 12}" text-anchor="middle" font-size="13" font-weight="bold">${esc(title)}</text>`,
  );
  for (const t of sx.ticks) {
    const px = sx(t);
    out.push(`<line x1="${px}" y1="${bottom}" x2="${px}" y2="${bottom + 4}" stroke="#333"/>`);
    out.push(
      `<text x="${px}" y="${bottom + 16}" text-anchor="middle" font-size="10">${fmt(t)}</text>`,
    );
  }
  for (const t of sy.ticks) {
    const py = sy(t);
    out.push(`<line x1="${left - 4}" y1="${py}" x2="${left}" y2="${py}" stroke="#333"/>`);
    out.push(
      `<text x="${left - 6}" y="${py + 3}" text-anchor="end" font-size="10">${fmt(t)}</text>`,
    );
  }
  out.push(
    `<text x="${(left + right) / 2}" y="${PANEL_H - 8}" text-anchor="middle" font-size="11">${esc(xLabel)}${logX ? ' (log)' : ''}</text>`,
  );

  if (bands) {
    bands.forEach((band, i) => {
      const color = COLORS[i % COLORS.length];
      const upper = band.points.map((p) => `${sx(p.x)},${sy(p.high)}`);
      const lower = [...band.points].reverse().map((p) => `${sx(p.x)},${sy(p.low)}`);
      out.push(
        `<polygon class="ci-band" data-series="${esc(band.label)}" points="${[...upper, ...lower].join(' ')}" fill="${color}" opacity="0.15"/>`,
      );
      const truthPts = band.points.map((p) => `${sx(p.x)},${sy(p.truth)}`).join(' ');
      out.push(
        `<polyline class="truth" points="${truthPts}" fill="none" stroke="#333" stroke-dasharray="4 3"/>`,
      );
    });
  }

  seriesList.forEach((series, i) => {
    const color = COLORS[i % COLORS.length];
    const pts = series.points
      .filter((p) => Number.isFinite(p.y))
      .map((p) => `${sx(p.x)},${sy(p.y)}`)
      .join(' ');
    out.push(
      `<polyline class="series-line" data-series="${esc(series.label)}" points="${pts}" fill="none" stroke="${color}" stroke-width="1.5"/>`,
    );
    for (const p of series.points) {
      if (!Number.isFinite(p.y)) continue;
      // exact source values ride along so figures stay auditable against the CSV
      out.push(
        `<circle class="datapoint" data-series="${esc(series.label)}" data-x="${p.x}" data-y="${p.y}" cx="${sx(p.x)}" cy="${sy(p.y)}" r="2.5" fill="${color}"/>`,
      );
    }
  });
  out.push('</g>');
  return out.join('\n');
}

/** Deterministic multi-panel SVG: one panel per metric plus an
 * estimate-scale panel with the replication CI band and the oracle truth. */
export function renderFigure(
  spec: FigureSpec,
  panels: { metric: ResultColumn; series: Series[] }[],
  bands: BandSeries[],
): string {
  const nPanels = panels.length + 1;
  const width = nPanels * PANEL_W;
  const legendLabels = bands.map((b) => b.label);
  const height = PANEL_H + 18 * legendLabels.length + 10;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" font-family="sans-serif">`,
  );
  if (spec.title) {
    parts.push(
      `<text x="${width / 2}" y="14" text-anchor="middle" font-size="14">${esc(spec.title)}</text>`,
    );
  }
  panels.forEach((p, i) => {
    parts.push(panel(i * PANEL_W, p.metric, p.series, null, spec.xColumn, spec.logX, spec.logY));
  });
  parts.push(
    panel(panels.length * PANEL_W, 'estimate ± 95% CI', [], bands, spec.xColumn, spec.logX, false),
  );
  legendLabels.forEach((label, i) => {
    const y = PANEL_H + 14 + 18 * i;
    parts.push(
      `<line x1="12" y1="${y - 4}" x2="36" y2="${y - 4}" stroke="${COLORS[i % COLORS.length]}" stroke-width="2"/>`,
    );
    parts.push(`<text x="42" y="${y}" font-size="11">${esc(label)}</text>`);
  });
  parts.push('</svg>');
  return parts.join('\n');
}

/**
 * Recover the plotted (x, y) values of every marker in a rendered figure,
 * grouped by panel then series — the round-trip counterpart of render.
 */
export function extractPlottedValues(
  svg: string,
): Map<string, Map<string, { x: number; y: number }[]>> {
  const panels = new Map<string, Map<string, { x: number; y: number }[]>>();
  const panelRe = /<g class="panel" data-metric="([^"]*)">([\s\S]*?)<\/g>/g;
  const pointRe = /<circle class="datapoint" data-series="([^"]*)" data-x="([^"]*)" data-y="([^"]*)"/g;
  for (const panelMatch of svg.matchAll(panelRe)) {
    const bydSeries = new Map<string, { x: number; y: number }[]>();
    for (const m of panelMatch[2].matchAll(pointRe)) {
      const label = m[1];
      if (!bydSeries.has(label)) bydSeries.set(label, []);
      bydSeries.get(label)!.push({ x: Number(m[2]), y: Number(m[3]) });
    }
    panels.set(panelMatch[1], bydSeries);
  }
  return panels;
}
