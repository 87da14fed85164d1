/** Wires the console UI to the session and the search API. */

import { SearchClient } from "./api.js";
import {
  renderComparison,
  renderErrorBanner,
  renderLegend,
  renderQueryConcepts,
  renderResults,
} from "./render.js";
import { SchemaError } from "./schema.js";
import { ConsoleSession, isRetryable, Verdict } from "./session.js";

const session = new ConsoleSession(new SearchClient(""));

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function currentOverrides(): void {
  const overrides: { deltaHighlight?: number; deltaCluster?: number } = {};
  const highlight = byId<HTMLInputElement>("delta-highlight");
  const cluster = byId<HTMLInputElement>("delta-cluster");
  if (byId<HTMLInputElement>("override-toggle").checked) {
    overrides.deltaHighlight = Number(highlight.value);
    overrides.deltaCluster = Number(cluster.value);
  }
  session.setOverrides(overrides);
}

function repaint(): void {
  const errors = byId("errors");
  errors.replaceChildren();
  const conceptsHost = byId("concepts");
  const resultsHost = byId("results");
  const compareHost = byId("comparison");
  conceptsHost.replaceChildren();
  resultsHost.replaceChildren();
  compareHost.replaceChildren();

  if (!session.current) return;
  const { query, response } = session.current;
  if (!session.plainMode) {
    conceptsHost.appendChild(renderQueryConcepts(query, response.concepts));
    conceptsHost.appendChild(renderLegend(response.concepts));
  }
  resultsHost.appendChild(renderResults(response, session.plainMode));
  for (const card of resultsHost.querySelectorAll<HTMLElement>(".result-card")) {
    const candidate = card.dataset.candidate ?? "";
    const actions = document.createElement("div");
    actions.className = "decision-actions";
    for (const verdict of ["accept", "reject"] as Verdict[]) {
      const button = document.createElement("button");
      button.textContent = verdict;
      button.className = `decision-${verdict}`;
      button.addEventListener("click", () => {
        session.mark(candidate, verdict);
        card.dataset.verdict = verdict;
      });
      actions.appendChild(button);
    }
    const existing = session.markOf(candidate);
    if (existing) card.dataset.verdict = existing.verdict;
    card.appendChild(actions);
  }
  if (session.previous) {
    compareHost.appendChild(
      renderComparison(
        session.previous.query,
        session.previous.response,
        query,
        response,
      ),
    );
  }
}

async function runSearch(): Promise<void> {
  const query = byId<HTMLInputElement>("query").value;
  if (!query.trim()) return;
  currentOverrides();
  try {
    const response = await session.run(query);
    if (response === null) return; // superseded by a newer search
    repaint();
  } catch (error) {
    const errors = byId("errors");
    errors.replaceChildren();
    if (error instanceof SchemaError) {
      errors.appendChild(renderErrorBanner(`response failed validation: ${error.message}`, error.raw));
    } else if (isRetryable(error)) {
      errors.appendChild(
        renderErrorBanner(`search unavailable: ${(error as Error).message}`, undefined, () => {
          void runSearch();
        }),
      );
    } else {
      throw error;
    }
  }
}

export function bootstrap(): void {
  byId<HTMLButtonElement>("search-button").addEventListener("click", () => void runSearch());
  byId<HTMLInputElement>("query").addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") void runSearch();
  });
  byId<HTMLInputElement>("plain-toggle").addEventListener("change", () => {
    session.togglePlainMode();
    repaint();
  });
  for (const id of ["delta-highlight", "delta-cluster"]) {
    byId<HTMLInputElement>(id).addEventListener("input", () => {
      byId(`${id}-value`).textContent = byId<HTMLInputElement>(id).value;
    });
  }
  byId<HTMLButtonElement>("export-button").addEventListener("click", () => {
    const blob = new Blob([session.exportMarks()], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "decisions.json";
    link.click();
    URL.revokeObjectURL(link.href);
  });
}

if (typeof document !== "undefined" && document.getElementById("search-button")) {
  bootstrap();
}
