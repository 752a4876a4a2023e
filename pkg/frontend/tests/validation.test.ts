import { describe, expect, it } from "vitest";
import { checkLimitPayload, isPositiveNumber, parseFormNumber } from "../src/validation";
import fixture from "../shared/limit-cases.json";

describe("limit payload validation", () => {
  for (const testCase of fixture.cases) {
    it(`agrees with the shared fixture: ${testCase.name}`, () => {
      const verdict = checkLimitPayload(testCase.payload as Record<string, unknown>);
      expect(verdict.ok).toBe(testCase.ok);
      if (!testCase.ok) {
        expect(verdict.field).not.toBeNull();
      }
    });
  }

  // not expressible in the JSON fixture but still must never reach the wire
  it("rejects NaN and infinities", () => {
    expect(isPositiveNumber(NaN)).toBe(false);
    expect(isPositiveNumber(Infinity)).toBe(false);
    expect(isPositiveNumber(-Infinity)).toBe(false);
  });

  it("names the first offending field", () => {
    expect(checkLimitPayload({ max_volume_ml: 0, max_rate_ml_h: 0 }).field)
      .toBe("max_volume_ml");
    expect(checkLimitPayload({ max_volume_ml: 1, max_rate_ml_h: 0 }).field)
      .toBe("max_rate_ml_h");
  });
});

describe("form number parsing", () => {
  it("parses plain and scientific notation", () => {
    expect(parseFormNumber("3.5")).toBe(3.5);
    expect(parseFormNumber(" 2 ")).toBe(2);
    expect(parseFormNumber("1e3")).toBe(1000);
  });

  it("returns null for empty or non-numeric text", () => {
    expect(parseFormNumber("")).toBeNull();
    expect(parseFormNumber("   ")).toBeNull();
    expect(parseFormNumber("abc")).toBeNull();
    expect(parseFormNumber("1,5")).toBeNull();
  });
});
