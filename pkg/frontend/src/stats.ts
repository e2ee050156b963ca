/** One-sample Kolmogorov–Smirnov test against a uniform interval.
 *
 * Used to audit the measured inter-stimulus jitter: across a session the
 * delays between the first and second gamble onsets should be uniform on
 * the configured interval. The p-value uses the asymptotic Kolmogorov
 * distribution with the standard small-sample correction, which is
 * accurate to a few parts in a thousand for n >= 10 — far tighter than
 * the 1% decision level applied to it.
 */

export function ksUniformStatistic(samples: number[], lo: number, hi: number): number {
  if (samples.length === 0) {
    throw new Error("KS statistic needs at least one sample");
  }
  if (!(hi > lo)) {
    throw new Error(`invalid interval [${lo}, ${hi}]`);
  }
  const n = samples.length;
  const sorted = [...samples].sort((a, b) => a - b);
  let d = 0;
  for (let i = 0; i < n; i += 1) {
    const cdf = Math.min(1, Math.max(0, (sorted[i] - lo) / (hi - lo)));
    d = Math.max(d, (i + 1) / n - cdf, cdf - i / n);
  }
  return d;
}

/** Survival function of the Kolmogorov distribution at `t`.
 *
 * Two series for the same distribution: the alternating form converges
 * fast for large `t`, the theta-function form for small `t`.
 */
export function kolmogorovSurvival(t: number): number {
  if (t <= 0) {
    return 1;
  }
  if (t < 0.75) {
    let cdf = 0;
    for (let k = 1; k <= 20; k += 2) {
      cdf += Math.exp((-k * k * Math.PI * Math.PI) / (8 * t * t));
    }
    cdf *= Math.sqrt(2 * Math.PI) / t;
    return Math.min(1, Math.max(0, 1 - cdf));
  }
  let sum = 0;
  for (let k = 1; k <= 100; k += 1) {
    const term = Math.exp(-2 * k * k * t * t);
    sum += (k % 2 === 1 ? 1 : -1) * term;
    if (term < 1e-12) {
      break;
    }
  }
  return Math.min(1, Math.max(0, 2 * sum));
}

export function ksUniformPValue(samples: number[], lo: number, hi: number): number {
  const n = samples.length;
  const d = ksUniformStatistic(samples, lo, hi);
  const t = d * (Math.sqrt(n) + 0.12 + 0.11 / Math.sqrt(n));
  return kolmogorovSurvival(t);
}

/** True when the sample is consistent with Uniform(lo, hi) at `level`. */
export function jitterLooksUniform(
  samples: number[],
  lo: number,
  hi: number,
  level = 0.01,
): boolean {
  return ksUniformPValue(samples, lo, hi) > level;
}
