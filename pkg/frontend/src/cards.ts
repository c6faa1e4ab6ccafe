import type { Recommendation, RecommendResponse } from "./types.js";

export function escapeHtml(value: string): string {
  return value
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

// Bar width is presentation only; the number printed next to it is the
// payload value verbatim.
function barWidth(score: number): number {
  return Math.max(0, Math.min(100, score * 100));
}

export function renderScoreRow(label: string, value: number): string {
  return [
    '<div class="score-row">',
    `<span class="score-label">${escapeHtml(label)}</span>`,
    '<span class="score-bar" aria-hidden="true">',
    `<span class="score-fill" style="width:${barWidth(value)}%"></span>`,
    "</span>",
    `<span class="score-value">${String(value)}</span>`,
    "</div>",
  ].join("");
}

export function renderCard(rec: Recommendation, status: string): string {
  const badge =
    status === "fallback"
      ? '<span class="badge badge-fallback" role="status">fallback</span>'
      : "";
  const capabilities = rec.evidence.matched_capabilities
    .map((token) => `<code>${escapeHtml(token)}</code>`)
    .join(" ");
  const explanation = rec.evidence.explanation
    ? `<p class="explanation">${escapeHtml(rec.evidence.explanation)}</p>`
    : "";
  const meta = rec.evidence.metadata;
  return `<article class="card" data-id="${escapeHtml(rec.id)}">
  <header>
    <span class="rank">#${rec.rank}</span>
    <h3>${escapeHtml(rec.name || rec.id)}</h3>
    ${badge}
  </header>
  <p class="category">${escapeHtml(meta.category)} / ${escapeHtml(meta.subcategory)}</p>
  ${renderScoreRow("semantic", rec.scores.semantic)}
  ${renderScoreRow("structural", rec.scores.structural)}
  ${renderScoreRow("fused", rec.scores.fused)}
  <p class="capabilities">${capabilities}</p>
  <p class="guidance">${escapeHtml(rec.evidence.guidance)}</p>
  ${explanation}
  <p><a href="${escapeHtml(rec.evidence.repo_url)}">repository</a></p>
  <label class="compare-pick">
    <input type="checkbox" data-compare="${escapeHtml(rec.id)}"> compare
  </label>
</article>`;
}

export function renderClarifications(questions: string[]): string {
  const items = questions
    .map((q) => `<li>${escapeHtml(q)}</li>`)
    .join("");
  return `<ul class="clarifications">${items}</ul>`;
}

export function renderResponse(response: RecommendResponse): string {
  if (response.status === "clarification") {
    return renderClarifications(response.clarifications ?? []);
  }
  return response.recommendations
    .map((rec) => renderCard(rec, response.status))
    .join("\n");
}
