/** Stage view model and DOM rendering.
 *
 * Rendering is strictly response-driven: feedback, hints, and solutions only
 * appear when the service actually sent them, so there is no client-side path
 * that could surface withheld material in test modes.
 */
import { InputDescriptor, StageView } from "./api.js";
import { FormulaError, previewFormula } from "./formula.js";

export interface StageViewModel {
  view: StageView;
  drafts: Record<string, string>;
  feedback: string | null;
  hints: string[];
  solution: string | null;
  pending: boolean;
  notice: string | null;
}

export function freshModel(view: StageView): StageViewModel {
  return {
    view,
    drafts: {},
    feedback: null,
    hints: [],
    solution: null,
    pending: false,
    notice: null,
  };
}

/** Stage advance: new view, drafts cleared; redo keeps the drafts editable. */
export function advanceModel(model: StageViewModel, view: StageView): StageViewModel {
  return freshModel(view);
}

export interface StageHandlers {
  onSubmit: () => void;
  onHint: () => void;
  onSkip: () => void;
  onDraft: (elementId: string, value: string) => void;
}

const MEDIA_TOKEN = /media:\/\/([0-9a-f]+)/g;

function renderTaskText(container: HTMLElement, text: string, mediaUrl: (id: string) => string): void {
  let last = 0;
  for (const match of text.matchAll(MEDIA_TOKEN)) {
    const before = text.slice(last, match.index);
    if (before) container.appendChild(document.createTextNode(before));
    const img = document.createElement("img");
    img.className = "task-media";
    img.src = mediaUrl(match[1]!);
    img.alt = "exercise graphic";
    container.appendChild(img);
    last = match.index! + match[0].length;
  }
  const rest = text.slice(last);
  if (rest) container.appendChild(document.createTextNode(rest));
}

function renderChoices(
  elem: InputDescriptor,
  kind: "radio" | "select",
  draft: string | undefined,
  handlers: StageHandlers,
): HTMLElement {
  if (kind === "select") {
    const select = document.createElement("select");
    select.dataset.element = elem.id;
    const placeholder = document.createElement("option");
    placeholder.value = "";
    placeholder.textContent = "choose...";
    placeholder.disabled = true;
    placeholder.selected = draft === undefined;
    select.appendChild(placeholder);
    (elem.options ?? []).forEach((option, index) => {
      const node = document.createElement("option");
      node.value = String(index);
      node.textContent = option;
      node.selected = draft === String(index);
      select.appendChild(node);
    });
    select.addEventListener("change", () => handlers.onDraft(elem.id, select.value));
    return select;
  }
  const group = document.createElement("div");
  group.className = "choice-group";
  group.dataset.element = elem.id;
  (elem.options ?? []).forEach((option, index) => {
    const label = document.createElement("label");
    const radio = document.createElement("input");
    radio.type = "radio";
    radio.name = `choice-${elem.id}`;
    radio.value = String(index);
    radio.checked = draft === String(index);
    radio.addEventListener("change", () => handlers.onDraft(elem.id, radio.value));
    label.appendChild(radio);
    label.appendChild(document.createTextNode(" " + option));
    group.appendChild(label);
  });
  return group;
}

function renderFormulaField(
  elem: InputDescriptor,
  draft: string | undefined,
  handlers: StageHandlers,
): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "formula-field";
  const input = document.createElement("input");
  input.type = "text";
  input.dataset.element = elem.id;
  input.placeholder = "enter a formula in x";
  input.value = draft ?? "";
  const preview = document.createElement("div");
  preview.className = "formula-preview";
  const update = () => {
    handlers.onDraft(elem.id, input.value);
    if (input.value.trim() === "") {
      preview.textContent = "";
      preview.classList.remove("formula-error");
      return;
    }
    try {
      preview.textContent = previewFormula(input.value);
      preview.classList.remove("formula-error");
    } catch (err) {
      preview.textContent = err instanceof FormulaError ? err.message : String(err);
      preview.classList.add("formula-error");
    }
  };
  input.addEventListener("input", update);
  wrap.appendChild(input);
  wrap.appendChild(preview);
  if (draft) update();
  return wrap;
}

function renderInput(
  elem: InputDescriptor,
  draft: string | undefined,
  handlers: StageHandlers,
): HTMLElement {
  switch (elem.kind) {
    case "dropDown":
      return renderChoices(elem, "select", draft, handlers);
    case "multipleChoice":
      return renderChoices(elem, "radio", draft, handlers);
    case "numericFill": {
      const input = document.createElement("input");
      input.type = "text";
      input.inputMode = "decimal";
      input.dataset.element = elem.id;
      input.placeholder = "enter a number";
      input.value = draft ?? "";
      input.addEventListener("input", () => handlers.onDraft(elem.id, input.value));
      return input;
    }
    case "formulaFill":
      return renderFormulaField(elem, draft, handlers);
    default: {
      const panel = document.createElement("div");
      panel.className = "error-panel";
      panel.textContent = `This exercise uses an input type ("${elem.kind}") this player does not support.`;
      return panel;
    }
  }
}

export function renderStage(
  model: StageViewModel,
  handlers: StageHandlers,
  mediaUrl: (id: string) => string = (id) => `/media/${id}`,
): HTMLElement {
  const root = document.createElement("section");
  root.className = "stage";
  root.dataset.stage = model.view.stage;
  root.dataset.mode = model.view.mode;

  const task = document.createElement("div");
  task.className = "task";
  renderTaskText(task, model.view.task, mediaUrl);
  root.appendChild(task);

  if (model.hints.length > 0) {
    const list = document.createElement("ol");
    list.className = "hints";
    for (const hint of model.hints) {
      const item = document.createElement("li");
      item.textContent = hint;
      list.appendChild(item);
    }
    root.appendChild(list);
  }

  if (model.solution !== null) {
    const panel = document.createElement("div");
    panel.className = "solution";
    panel.textContent = model.solution;
    root.appendChild(panel);
  }

  if (model.feedback !== null) {
    const panel = document.createElement("div");
    panel.className = "feedback";
    panel.textContent = model.feedback;
    root.appendChild(panel);
  }

  if (model.notice !== null) {
    const panel = document.createElement("div");
    panel.className = "notice";
    panel.textContent = model.notice;
    root.appendChild(panel);
  }

  const form = document.createElement("div");
  form.className = "inputs";
  for (const elem of model.view.inputs) {
    form.appendChild(renderInput(elem, model.drafts[elem.id], handlers));
  }
  root.appendChild(form);

  const buttons = document.createElement("div");
  buttons.className = "actions";

  const submit = document.createElement("button");
  submit.className = "submit";
  submit.textContent = "Submit";
  submit.disabled = model.pending;
  submit.addEventListener("click", handlers.onSubmit);
  buttons.appendChild(submit);

  // hint affordance exists only when the service advertises one
  if (model.view.hintAvailable === true) {
    const hint = document.createElement("button");
    hint.className = "hint";
    hint.textContent = "Hint";
    hint.disabled = model.pending;
    hint.addEventListener("click", handlers.onHint);
    buttons.appendChild(hint);
  }

  if (model.view.skippable) {
    const skip = document.createElement("button");
    skip.className = "skip";
    skip.textContent = "Skip";
    skip.disabled = model.pending;
    skip.addEventListener("click", handlers.onSkip);
    buttons.appendChild(skip);
  }

  root.appendChild(buttons);
  return root;
}

export function renderScoreSummary(result: {
  total: number;
  stageScores: Record<string, number>;
  path: string[];
}): HTMLElement {
  const root = document.createElement("section");
  root.className = "summary";
  const headline = document.createElement("h2");
  headline.textContent = `Final score: ${result.total} / 100`;
  root.appendChild(headline);
  const list = document.createElement("ul");
  for (const stage of result.path) {
    const item = document.createElement("li");
    item.textContent = `${stage}: ${result.stageScores[stage] ?? 0}`;
    list.appendChild(item);
  }
  root.appendChild(list);
  return root;
}
