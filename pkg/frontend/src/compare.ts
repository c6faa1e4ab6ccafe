import { escapeHtml } from "./cards.js";
import type { Recommendation } from "./types.js";

export interface CompareRow {
  field: string;
  a: string;
  b: string;
  equal: boolean;
}

// Values are stringified payload fields, never recomputed.
const FIELDS: ReadonlyArray<[string, (rec: Recommendation) => string]> = [
  ["name", (r) => r.name || r.id],
  ["category", (r) => r.evidence.metadata.category],
  ["subcategory", (r) => r.evidence.metadata.subcategory],
  ["language", (r) => r.evidence.metadata.language],
  ["system", (r) => r.evidence.metadata.system],
  ["license", (r) => r.evidence.metadata.license],
  ["official", (r) => String(r.evidence.metadata.official)],
  ["repository", (r) => r.evidence.repo_url],
  ["semantic", (r) => String(r.scores.semantic)],
  ["structural", (r) => String(r.scores.structural)],
  ["fused", (r) => String(r.scores.fused)],
  ["provenance", (r) => r.evidence.provenance],
];

export function compareCards(a: Recommendation, b: Recommendation): CompareRow[] {
  return FIELDS.map(([field, get]) => {
    const left = get(a);
    const right = get(b);
    return { field, a: left, b: right, equal: left === right };
  });
}

export function renderComparePanel(a: Recommendation, b: Recommendation): string {
  const rows = compareCards(a, b)
    .map(
      (row) =>
        `<tr class="${row.equal ? "equal" : "diff"}">` +
        `<th scope="row">${escapeHtml(row.field)}</th>` +
        `<td>${escapeHtml(row.a)}</td>` +
        `<td>${escapeHtml(row.b)}</td></tr>`,
    )
    .join("");
  return `<table class="compare">
  <caption>side by side</caption>
  <thead>
    <tr>
      <th scope="col">field</th>
      <th scope="col">${escapeHtml(a.name || a.id)}</th>
      <th scope="col">${escapeHtml(b.name || b.id)}</th>
    </tr>
  </thead>
  <tbody>${rows}</tbody>
</table>`;
}
