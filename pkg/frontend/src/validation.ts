// Mirrors the server's rule for limit values: a JSON number (booleans are
// not numbers), finite, strictly positive, and not so small that it rounds
// to zero at the server's millilitre quantum. The server stays authoritative;
// this only guarantees the form never sends what the server would reject.

export const LIMIT_FIELDS = ["max_volume_ml", "max_rate_ml_h"] as const;

export const ML_QUANTUM = 0.001;

export function isPositiveNumber(value: unknown): value is number {
  return typeof value === "number" && Number.isFinite(value) && value > 0;
}

export function survivesQuantization(value: number): boolean {
  return Math.round(value / ML_QUANTUM) > 0;
}

export interface LimitVerdict {
  ok: boolean;
  field: string | null;
}

export function checkLimitPayload(payload: Record<string, unknown>): LimitVerdict {
  for (const field of LIMIT_FIELDS) {
    const value = payload[field];
    if (!isPositiveNumber(value) || !survivesQuantization(value)) {
      return { ok: false, field };
    }
  }
  return { ok: true, field: null };
}

/** Form text to number; empty or non-numeric input never reaches the wire. */
export function parseFormNumber(raw: string): number | null {
  const trimmed = raw.trim();
  if (trimmed === "") {
    return null;
  }
  const value = Number(trimmed);
  return Number.isFinite(value) ? value : null;
}
