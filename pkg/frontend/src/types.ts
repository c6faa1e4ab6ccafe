// Shapes mirror the service's JSON payloads exactly; the client never
// derives or recomputes any of these values.

export interface ScoreBreakdown {
  semantic: number;
  structural: number;
  fused: number;
}

export interface EvidenceMetadata {
  category: string;
  subcategory: string;
  language: string;
  system: string;
  license: string;
  official: boolean;
}

export interface Evidence {
  metadata: EvidenceMetadata;
  repo_url: string;
  matched_capabilities: string[];
  guidance: string;
  provenance: string;
  explanation?: string;
}

export interface Recommendation {
  id: string;
  name: string;
  rank: number;
  scores: ScoreBreakdown;
  evidence: Evidence;
}

export type ResponseStatus = "accepted" | "fallback" | "clarification";

export interface RecommendResponse {
  session_id: string;
  recommendations: Recommendation[];
  status: ResponseStatus;
  reason?: string | null;
  constraints?: Record<string, string>;
  clarifications?: string[];
}

export interface HealthResponse {
  status: "ok" | "loading";
  servers?: number;
  snapshot?: string;
}

export interface SessionSnapshot {
  session_id: string;
  intent: string;
  constraints: Record<string, string>;
  turns: number;
  history: unknown[];
}

export interface RecommendRequest {
  task_text: string;
  session_id?: string;
  constraints?: Record<string, string>;
  clear_constraints?: boolean;
  k?: number;
}
