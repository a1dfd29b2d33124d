import { Point } from './figure.js';

/** Ordinary least-squares slope of y against x. */
export function fitSlope(points: { x: number; y: number }[]): number {
  if (points.length < 2) {
    throw new Error('slope fit needs at least two points');
  }
  const n = points.length;
  const mx = points.reduce((a, p) => a + p.x, 0) / n;
  const my = points.reduce((a, p) => a + p.y, 0) / n;
  let num = 0;
  let den = 0;
  for (const p of points) {
    num += (p.x - mx) * (p.y - my);
    den += (p.x - mx) ** 2;
  }
  if (den === 0) {
    throw new Error('slope fit needs distinct x values');
  }
  return num / den;
}

/** Slope on log-log axes, e.g. -1 for 1/n decay. */
export function fitLogLogSlope(points: Point[]): number {
  const usable = points.filter((p) => p.x > 0 && p.y > 0 && Number.isFinite(p.y));
  return fitSlope(usable.map((p) => ({ x: Math.log(p.x), y: Math.log(p.y) })));
}
