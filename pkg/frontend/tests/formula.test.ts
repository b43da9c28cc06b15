import { describe, expect, it } from "vitest";

import { FormulaError, previewFormula } from "../src/formula.js";

describe("previewFormula", () => {
  it("renders the worked-example formula without error", () => {
    expect(previewFormula("(1/pi)*atan((x-3)/2)+1/2")).toBe("1/pi*atan((x-3)/2)+1/2");
  });

  it("accepts the arctan alias", () => {
    expect(previewFormula("arctan(x)")).toBe("atan(x)");
  });

  it("keeps structural parentheses", () => {
    expect(previewFormula("a-(b-c)")).toBe("a-(b-c)");
    expect(previewFormula("(a-b)-c")).toBe("a-b-c");
    expect(previewFormula("2^3^2")).toBe("2^3^2");
    expect(previewFormula("(2^3)^2")).toBe("(2^3)^2");
  });

  it("round-trips its own output", () => {
    for (const text of [
      "-x^2",
      "1/(pi*k)*atan((x-m)/k)+1/2",
      "sqrt(abs(x))-min(1,2,3)",
      "2.5e-2*x",
    ]) {
      const once = previewFormula(text);
      expect(previewFormula(once)).toBe(once);
    }
  });

  it("reports the error position for incomplete input", () => {
    try {
      previewFormula("x +");
      expect.unreachable("should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(FormulaError);
      expect((err as FormulaError).position).toBe(3);
    }
  });

  it("rejects unknown functions", () => {
    expect(() => previewFormula("frobnicate(x)")).toThrow(FormulaError);
  });

  it("rejects empty input", () => {
    expect(() => previewFormula("   ")).toThrow(FormulaError);
  });
});
