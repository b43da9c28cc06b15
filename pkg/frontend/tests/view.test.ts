import { describe, expect, it, vi } from "vitest";

import type { StageView } from "../src/api.js";
import { freshModel, renderStage } from "../src/view.js";

const noHandlers = {
  onSubmit: () => {},
  onHint: () => {},
  onSkip: () => {},
  onDraft: () => {},
};

function formativeView(overrides: Partial<StageView> = {}): StageView {
  return {
    stage: "tails",
    mode: "formative",
    task: "Does the question call for a left, right or two tailed test?",
    inputs: [
      {
        id: "tail",
        kind: "dropDown",
        options: ["left tailed", "right tailed", "two tailed"],
      },
    ],
    skippable: false,
    terminal: false,
    completed: false,
    hintAvailable: true,
    nextHintIndex: 0,
    ...overrides,
  };
}

describe("renderStage", () => {
  it("renders a drop-down with the option texts", () => {
    const dom = renderStage(freshModel(formativeView()), noHandlers);
    const select = dom.querySelector<HTMLSelectElement>("select[data-element=tail]");
    expect(select).not.toBeNull();
    const labels = [...select!.querySelectorAll("option")].map((o) => o.textContent);
    expect(labels).toEqual(["choose...", "left tailed", "right tailed", "two tailed"]);
  });

  it("renders radio groups for multiple choice", () => {
    const view = formativeView({
      inputs: [{ id: "pick", kind: "multipleChoice", options: ["a", "b"] }],
    });
    const dom = renderStage(freshModel(view), noHandlers);
    expect(dom.querySelectorAll("input[type=radio]")).toHaveLength(2);
  });

  it("renders a live parse preview for formula fields", () => {
    const view = formativeView({
      inputs: [{ id: "formula", kind: "formulaFill" }],
    });
    const dom = renderStage(freshModel(view), noHandlers);
    document.body.appendChild(dom);
    const input = dom.querySelector<HTMLInputElement>("input[data-element=formula]")!;
    const preview = dom.querySelector<HTMLElement>(".formula-preview")!;

    input.value = "(1/pi)*atan((x-3)/2)+1/2";
    input.dispatchEvent(new Event("input"));
    expect(preview.textContent).toBe("1/pi*atan((x-3)/2)+1/2");
    expect(preview.classList.contains("formula-error")).toBe(false);

    input.value = "x +";
    input.dispatchEvent(new Event("input"));
    expect(preview.classList.contains("formula-error")).toBe(true);
    dom.remove();
  });

  it("turns media tokens in the task into images", () => {
    const view = formativeView({
      task: "Look at media://0affe1234567890123456789 and answer.",
      inputs: [{ id: "value", kind: "numericFill" }],
    });
    const dom = renderStage(freshModel(view), noHandlers, (id) => `/media/${id}`);
    const img = dom.querySelector<HTMLImageElement>("img.task-media");
    expect(img).not.toBeNull();
    expect(img!.src).toContain("/media/0affe1234567890123456789");
    expect(dom.querySelector(".task")!.textContent).toContain("and answer.");
  });

  it("shows an error panel for unknown input kinds instead of crashing", () => {
    const view = formativeView({
      inputs: [{ id: "weird", kind: "sketchPad" }],
    });
    const dom = renderStage(freshModel(view), noHandlers);
    expect(dom.querySelector(".error-panel")!.textContent).toContain("sketchPad");
  });

  it("hides the hint button when the view does not advertise hints", () => {
    const summative = formativeView({ mode: "summative" });
    delete summative.hintAvailable;
    delete summative.nextHintIndex;
    const dom = renderStage(freshModel(summative), noHandlers);
    expect(dom.querySelector("button.hint")).toBeNull();
    expect(dom.querySelector("button.submit")).not.toBeNull();
  });

  it("hides the skip button when the stage is not skippable", () => {
    const dom = renderStage(freshModel(formativeView({ skippable: false })), noHandlers);
    expect(dom.querySelector("button.skip")).toBeNull();
    const skippable = renderStage(freshModel(formativeView({ skippable: true })), noHandlers);
    expect(skippable.querySelector("button.skip")).not.toBeNull();
  });

  it("renders feedback, hints and solution only when the model holds them", () => {
    const bare = renderStage(freshModel(formativeView()), noHandlers);
    expect(bare.querySelector(".feedback")).toBeNull();
    expect(bare.querySelector(".hints")).toBeNull();
    expect(bare.querySelector(".solution")).toBeNull();

    const model = freshModel(formativeView());
    model.feedback = "Check the direction of the alternative.";
    model.hints = ["first hint", "second hint"];
    model.solution = "right tailed";
    const full = renderStage(model, noHandlers);
    expect(full.querySelector(".feedback")!.textContent).toContain("direction");
    expect([...full.querySelectorAll(".hints li")].map((n) => n.textContent)).toEqual([
      "first hint",
      "second hint",
    ]);
    expect(full.querySelector(".solution")!.textContent).toBe("right tailed");
  });

  it("disables action buttons while a submission is in flight", () => {
    const model = freshModel(formativeView({ skippable: true }));
    model.pending = true;
    const dom = renderStage(model, noHandlers);
    for (const button of dom.querySelectorAll("button")) {
      expect(button.disabled).toBe(true);
    }
  });

  it("wires the submit button to the handler", () => {
    const onSubmit = vi.fn();
    const dom = renderStage(freshModel(formativeView()), { ...noHandlers, onSubmit });
    dom.querySelector<HTMLButtonElement>("button.submit")!.click();
    expect(onSubmit).toHaveBeenCalledOnce();
  });
});
