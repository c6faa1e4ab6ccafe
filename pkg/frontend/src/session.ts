import type {
  Recommendation,
  RecommendRequest,
  RecommendResponse,
} from "./types.js";

// The view only needs the recommend call; tests stub this shape directly.
export interface RecommendGateway {
  recommend(body: RecommendRequest): Promise<RecommendResponse>;
}

export interface ConstraintEditor {
  language: string;
  system: string;
  theme: string;
}

export interface Turn {
  request: {
    taskText: string;
    constraints: Record<string, string>;
    clearConstraints: boolean;
  };
  response: RecommendResponse;
}

export interface SubmitOptions {
  constraints?: Record<string, string>;
  clearConstraints?: boolean;
  k?: number;
}

export class ConversationView {
  sessionId: string | null = null;
  notice = "";
  readonly turns: Turn[] = [];
  constraintEditor: ConstraintEditor = { language: "", system: "", theme: "" };
  // Single in-flight request per session; later submissions wait their turn.
  private tail: Promise<unknown> = Promise.resolve();

  constructor(private readonly client: RecommendGateway) {}

  get lastResponse(): RecommendResponse | null {
    const last = this.turns[this.turns.length - 1];
    return last ? last.response : null;
  }

  get cards(): Recommendation[] {
    const response = this.lastResponse;
    if (!response || response.status === "clarification") return [];
    return response.recommendations;
  }

  get clarifications(): string[] {
    return this.lastResponse?.clarifications ?? [];
  }

  submit(taskText: string, options: SubmitOptions = {}): Promise<RecommendResponse> {
    const run = this.tail.then(() => this.send(taskText, options));
    this.tail = run.catch(() => undefined); // a failed turn must not jam the queue
    return run;
  }

  private async send(
    taskText: string,
    options: SubmitOptions,
  ): Promise<RecommendResponse> {
    const body: RecommendRequest = { task_text: taskText };
    if (this.sessionId) body.session_id = this.sessionId;
    if (options.constraints && Object.keys(options.constraints).length > 0) {
      body.constraints = options.constraints;
    }
    if (options.clearConstraints) body.clear_constraints = true;
    if (options.k !== undefined) body.k = options.k;

    const response = await this.client.recommend(body);

    // The service silently opens a fresh session when the old id is gone;
    // surface that as a notice instead of hiding the swap.
    if (this.sessionId && response.session_id !== this.sessionId) {
      this.notice = "Previous session expired; a new one was started.";
    } else {
      this.notice = "";
    }
    this.sessionId = response.session_id;

    if (response.constraints) {
      this.constraintEditor = {
        language: response.constraints["language"] ?? "",
        system: response.constraints["system"] ?? "",
        theme: response.constraints["theme"] ?? "",
      };
    }
    this.turns.push({
      request: {
        taskText,
        constraints: options.constraints ?? {},
        clearConstraints: Boolean(options.clearConstraints),
      },
      response,
    });
    return response;
  }
}
