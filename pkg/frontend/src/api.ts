import type {
  HealthResponse,
  RecommendRequest,
  RecommendResponse,
  SessionSnapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    const body: unknown = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail = (body as { detail?: unknown }).detail;
      throw new ApiError(
        response.status,
        typeof detail === "string" ? detail : `request failed (${response.status})`,
      );
    }
    return body as T;
  }

  health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("/health");
  }

  createSession(): Promise<{ session_id: string }> {
    return this.request<{ session_id: string }>("/sessions", { method: "POST" });
  }

  session(id: string): Promise<SessionSnapshot> {
    return this.request<SessionSnapshot>(`/sessions/${encodeURIComponent(id)}`);
  }

  recommend(body: RecommendRequest): Promise<RecommendResponse> {
    return this.request<RecommendResponse>("/recommend", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }
}
