import { ApiClient, ApiError } from "./api.js";
import { escapeHtml, renderResponse } from "./cards.js";
import { renderComparePanel } from "./compare.js";
import { ConversationView } from "./session.js";
import type { Recommendation } from "./types.js";

interface Elements {
  form: HTMLFormElement;
  taskText: HTMLTextAreaElement;
  language: HTMLSelectElement;
  system: HTMLSelectElement;
  theme: HTMLInputElement;
  clearConstraints: HTMLInputElement;
  turns: HTMLElement;
  notice: HTMLElement;
  errorBox: HTMLElement;
  health: HTMLElement;
  comparePanel: HTMLElement;
}

function lookup(doc: Document): Elements {
  const get = <T extends Element>(selector: string): T => {
    const el = doc.querySelector<T>(selector);
    if (!el) throw new Error(`missing element ${selector}`);
    return el;
  };
  return {
    form: get<HTMLFormElement>("#task-form"),
    taskText: get<HTMLTextAreaElement>("#task-text"),
    language: get<HTMLSelectElement>("#constraint-language"),
    system: get<HTMLSelectElement>("#constraint-system"),
    theme: get<HTMLInputElement>("#constraint-theme"),
    clearConstraints: get<HTMLInputElement>("#clear-constraints"),
    turns: get<HTMLElement>("#turns"),
    notice: get<HTMLElement>("#notice"),
    errorBox: get<HTMLElement>("#error"),
    health: get<HTMLElement>("#health"),
    comparePanel: get<HTMLElement>("#compare-panel"),
  };
}

export function init(doc: Document, client = new ApiClient("")): ConversationView {
  const els = lookup(doc);
  const view = new ConversationView(client);
  let lastSubmission: (() => Promise<void>) | null = null;

  void client
    .health()
    .then((h) => {
      els.health.textContent =
        h.status === "ok" ? `ready (${h.servers} servers)` : "loading";
    })
    .catch(() => {
      els.health.textContent = "offline";
    });

  function cardById(id: string): Recommendation | undefined {
    return view.cards.find((rec) => rec.id === id);
  }

  function updateCompare(): void {
    const checked = Array.from(
      els.turns.querySelectorAll<HTMLInputElement>("input[data-compare]:checked"),
    ).map((box) => box.dataset["compare"] ?? "");
    if (checked.length === 2) {
      const a = cardById(checked[0] ?? "");
      const b = cardById(checked[1] ?? "");
      els.comparePanel.innerHTML = a && b ? renderComparePanel(a, b) : "";
    } else {
      els.comparePanel.innerHTML = "";
    }
  }

  function renderTurns(): void {
    els.turns.innerHTML = view.turns
      .map(
        (turn) =>
          '<section class="turn">' +
          `<p class="user-message">${escapeHtml(turn.request.taskText)}</p>` +
          renderResponse(turn.response) +
          "</section>",
      )
      .join("");
    els.notice.textContent = view.notice;
    els.language.value = view.constraintEditor.language;
    els.system.value = view.constraintEditor.system;
    els.theme.value = view.constraintEditor.theme;
    for (const box of els.turns.querySelectorAll<HTMLInputElement>(
      "input[data-compare]",
    )) {
      box.addEventListener("change", updateCompare);
    }
    updateCompare();
  }

  function showError(message: string): void {
    els.errorBox.innerHTML =
      `<p role="alert">${escapeHtml(message)}</p>` +
      '<button type="button" id="retry">retry</button>';
    const retry = els.errorBox.querySelector<HTMLButtonElement>("#retry");
    retry?.addEventListener("click", () => {
      if (lastSubmission) void lastSubmission();
    });
  }

  async function submit(): Promise<void> {
    const constraints: Record<string, string> = {};
    if (els.language.value) constraints["language"] = els.language.value;
    if (els.system.value) constraints["system"] = els.system.value;
    if (els.theme.value) constraints["theme"] = els.theme.value;
    const clear = els.clearConstraints.checked;
    els.errorBox.innerHTML = "";
    try {
      await view.submit(els.taskText.value, {
        constraints,
        clearConstraints: clear,
      });
      els.clearConstraints.checked = false;
    } catch (err) {
      showError(err instanceof ApiError ? err.message : "request failed");
    }
    renderTurns();
  }

  els.form.addEventListener("submit", (event) => {
    event.preventDefault();
    lastSubmission = submit;
    void submit();
  });

  return view;
}
