/** Player application: exercise picker, stage loop, score summary. */
import {
  ApiClient,
  ApiError,
  NetworkError,
  SessionResult,
  StageView,
  SubmissionOutcome,
} from "./api.js";
import {
  StageHandlers,
  StageViewModel,
  freshModel,
  renderScoreSummary,
  renderStage,
} from "./view.js";

type RetryableAction = () => Promise<void>;

export class PlayerApp {
  private token: string | null = null;
  private model: StageViewModel | null = null;
  private result: SessionResult | null = null;
  private lastAction: RetryableAction | null = null;
  private chain: Promise<void> = Promise.resolve();

  onFinished: ((result: SessionResult) => void) | null = null;

  constructor(private root: HTMLElement, private api: ApiClient) {}

  /** Resolves when all in-flight actions have settled (used by tests). */
  settled(): Promise<void> {
    return this.chain;
  }

  private enqueue(action: RetryableAction): Promise<void> {
    this.chain = this.chain.then(action, action);
    return this.chain;
  }

  start(exerciseId: string, mode: string, seed?: number): Promise<void> {
    return this.enqueue(async () => {
      const started = await this.api.startSession(exerciseId, mode, seed);
      this.token = started.token;
      this.model = freshModel(started.firstStageView);
      this.render();
    });
  }

  private handlers(): StageHandlers {
    return {
      onSubmit: () => void this.submit(),
      onHint: () => void this.hint(),
      onSkip: () => void this.skip(),
      onDraft: (id, value) => {
        if (this.model) this.model.drafts[id] = value;
      },
    };
  }

  private render(): void {
    this.root.replaceChildren();
    if (this.result) {
      this.root.appendChild(renderScoreSummary(this.result));
      return;
    }
    if (this.model) {
      this.root.appendChild(
        renderStage(this.model, this.handlers(), (id) => this.api.mediaUrl(id)),
      );
      if (this.lastAction) {
        const retry = document.createElement("button");
        retry.className = "retry";
        retry.textContent = "Connection lost - try again";
        const action = this.lastAction;
        retry.addEventListener("click", () => void this.enqueue(action));
        this.root.appendChild(retry);
      }
    }
  }

  private async guarded(action: RetryableAction): Promise<void> {
    if (!this.model || this.model.pending) return;
    this.model.pending = true;
    this.lastAction = null;
    this.render();
    try {
      await action();
    } catch (err) {
      if (this.model) this.model.pending = false;
      if (err instanceof NetworkError) {
        // keep drafts, offer a retry
        this.lastAction = action;
        if (this.model) this.model.notice = null;
      } else if (err instanceof ApiError) {
        if (this.model) this.model.notice = friendlyMessage(err);
      } else {
        throw err;
      }
    }
    this.render();
  }

  submit(): Promise<void> {
    return this.enqueue(() =>
      this.guarded(async () => {
        const model = this.model!;
        const outcome = await this.api.submit(this.token!, { ...model.drafts });
        this.applyOutcome(model, outcome);
      }),
    );
  }

  private applyOutcome(model: StageViewModel, outcome: SubmissionOutcome): void {
    if (outcome.completed) {
      void this.finish();
      return;
    }
    const next = outcome.nextStageView as StageView;
    if (outcome.outcome === "redo") {
      // same stage: feedback inline, drafts stay editable
      model.pending = false;
      model.view = next;
      model.feedback = outcome.feedback ?? null;
      model.notice = null;
      this.model = model;
    } else {
      this.model = freshModel(next);
    }
  }

  hint(): Promise<void> {
    return this.enqueue(() =>
      this.guarded(async () => {
        const model = this.model!;
        const reply = await this.api.hint(this.token!);
        const refreshed = await this.api.currentStage(this.token!);
        model.pending = false;
        model.view = refreshed;
        model.hints = [...model.hints, reply.hintText];
        this.model = model;
      }),
    );
  }

  skip(): Promise<void> {
    return this.enqueue(() =>
      this.guarded(async () => {
        const model = this.model!;
        const reply = await this.api.skip(this.token!);
        if (reply.completed) {
          if (reply.solutionText) {
            model.solution = reply.solutionText;
            model.pending = false;
            this.model = model;
            this.render();
          }
          void this.finish();
          return;
        }
        const next = freshModel(reply.nextStageView as StageView);
        if (reply.solutionText) {
          next.solution = reply.solutionText;
        }
        this.model = next;
      }),
    );
  }

  finish(): Promise<void> {
    return this.enqueue(async () => {
      const result = await this.api.finish(this.token!);
      this.result = result;
      this.model = null;
      this.render();
      if (this.onFinished) this.onFinished(result);
    });
  }
}

function friendlyMessage(err: ApiError): string {
  if (err.status === 403) {
    return "That action is not available in this assessment mode.";
  }
  if (err.status === 409) {
    return "This session has already moved on - reload to see its state.";
  }
  return `The server rejected the request: ${err.message}`;
}

export function mountPicker(root: HTMLElement, api: ApiClient): void {
  void (async () => {
    const exercises = await api.listExercises();
    const picker = document.createElement("div");
    picker.className = "picker";
    const select = document.createElement("select");
    for (const exercise of exercises) {
      const option = document.createElement("option");
      option.value = exercise.id;
      option.textContent = exercise.title;
      select.appendChild(option);
    }
    const mode = document.createElement("select");
    for (const value of ["formative", "summative", "exam"]) {
      const option = document.createElement("option");
      option.value = value;
      option.textContent = value;
      mode.appendChild(option);
    }
    const go = document.createElement("button");
    go.textContent = "Start";
    go.addEventListener("click", () => {
      picker.remove();
      const stageRoot = document.createElement("div");
      root.appendChild(stageRoot);
      const app = new PlayerApp(stageRoot, api);
      void app.start(select.value, mode.value);
    });
    picker.appendChild(select);
    picker.appendChild(mode);
    picker.appendChild(go);
    root.appendChild(picker);
  })();
}
