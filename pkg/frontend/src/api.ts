/** Typed client for the exercise service HTTP API. */

export interface ExerciseInfo {
  id: string;
  title: string;
  modesAllowed: string[];
}

export interface InputDescriptor {
  id: string;
  kind: "multipleChoice" | "dropDown" | "numericFill" | "formulaFill" | string;
  options?: string[];
}

export interface StageView {
  stage: string;
  mode: "formative" | "summative" | "exam";
  task: string;
  inputs: InputDescriptor[];
  skippable: boolean;
  terminal: boolean;
  completed: boolean;
  hintAvailable?: boolean;
  nextHintIndex?: number;
}

export interface SessionStart {
  token: string;
  firstStageView: StageView;
}

export interface SubmissionOutcome {
  outcome: "advanced" | "redo" | "fallback";
  completed: boolean;
  score?: number;
  feedback?: string;
  nextStageView?: StageView;
}

export interface SkipReply {
  completed: boolean;
  solutionText?: string;
  nextStageView?: StageView;
}

export interface SessionResult {
  sessionId: string;
  exerciseId: string;
  mode: string;
  seed: number;
  total: number;
  stageScores: Record<string, number>;
  path: string[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

/** Raised on transport failures so the UI can offer a retry without losing drafts. */
export class NetworkError extends Error {}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, {
        headers: { "content-type": "application/json" },
        ...init,
      });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listExercises(): Promise<ExerciseInfo[]> {
    return this.request("/exercises");
  }

  startSession(exerciseId: string, mode: string, seed?: number): Promise<SessionStart> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify(seed === undefined ? { exerciseId, mode } : { exerciseId, mode, seed }),
    });
  }

  currentStage(token: string): Promise<StageView> {
    return this.request(`/sessions/${token}/stage`);
  }

  submit(token: string, inputs: Record<string, string | number>): Promise<SubmissionOutcome> {
    return this.request(`/sessions/${token}/submissions`, {
      method: "POST",
      body: JSON.stringify({ inputs }),
    });
  }

  hint(token: string): Promise<{ hintText: string }> {
    return this.request(`/sessions/${token}/hints`, { method: "POST" });
  }

  skip(token: string): Promise<SkipReply> {
    return this.request(`/sessions/${token}/skip`, { method: "POST" });
  }

  finish(token: string): Promise<SessionResult> {
    return this.request(`/sessions/${token}/finish`, { method: "POST" });
  }

  mediaUrl(mediaId: string): string {
    return `${this.baseUrl}/media/${mediaId}`;
  }
}
