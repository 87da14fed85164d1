/**
 * DOM construction for search responses.
 *
 * Every highlighted substring is sliced from the response's own offsets and
 * sources; no offsets are recomputed and no similarity math happens here.
 * Concepts are identified both by color and by an index label ("C0", "C1"),
 * so color is never the only signal.
 */

import { ConceptView, ResultView, SearchResponse } from "./schema.js";

export const CONCEPT_COLORS = [
  "#e06c4f",
  "#4f8fe0",
  "#52b365",
  "#b76fc4",
  "#d4a72c",
  "#3bbcb8",
  "#e0608f",
  "#8a93e0",
];

export function conceptColor(index: number): string {
  return CONCEPT_COLORS[index % CONCEPT_COLORS.length] as string;
}

export function conceptLabel(index: number): string {
  return `C${index}`;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function formatScore(value: number): string {
  return value.toFixed(4);
}

/** The query with each concept's tokens wrapped in labeled colored marks. */
export function renderQueryConcepts(query: string, concepts: ConceptView[]): HTMLElement {
  const container = el("div", "query-view");
  const spans: { start: number; end: number; concept: number }[] = [];
  concepts.forEach((concept, k) => {
    for (const [start, end] of concept.token_spans) {
      spans.push({ start, end, concept: k });
    }
  });
  spans.sort((a, b) => a.start - b.start);

  let cursor = 0;
  for (const span of spans) {
    if (span.start > cursor) {
      container.appendChild(document.createTextNode(query.slice(cursor, span.start)));
    }
    const mark = el("mark", "concept-span", query.slice(span.start, span.end));
    mark.dataset.concept = String(span.concept);
    mark.style.backgroundColor = conceptColor(span.concept);
    mark.title = conceptLabel(span.concept);
    container.appendChild(mark);
    cursor = span.end;
  }
  if (cursor < query.length) {
    container.appendChild(document.createTextNode(query.slice(cursor)));
  }
  return container;
}

/** Legend chip per concept; fallback concepts get a low-confidence badge. */
export function renderLegend(concepts: ConceptView[]): HTMLElement {
  const legend = el("div", "concept-legend");
  concepts.forEach((concept, k) => {
    const chip = el("span", "legend-chip", conceptLabel(k));
    chip.dataset.concept = String(k);
    chip.style.borderColor = conceptColor(k);
    legend.appendChild(chip);
  });
  if (concepts.some((c) => c.fallback)) {
    legend.appendChild(el("span", "fallback-badge", "low-confidence concepts"));
  }
  return legend;
}

/**
 * One candidate card. With plainMode the card shows only rank, id, score,
 * and untinted source (the control-interface view); all explanation markup
 * is omitted, not merely hidden.
 */
export function renderResult(
  result: ResultView,
  concepts: ConceptView[],
  plainMode: boolean,
  rankPosition: number,
): HTMLElement {
  const card = el("article", "result-card");
  card.dataset.candidate = result.id;

  const header = el("header", "result-header");
  header.appendChild(el("span", "result-rank", `#${rankPosition}`));
  header.appendChild(el("span", "result-id", result.id));
  header.appendChild(el("span", "result-score", `score ${formatScore(result.score)}`));
  card.appendChild(header);

  if (result.degenerate) {
    card.classList.add("degenerate");
    card.appendChild(el("div", "degenerate-notice", "no aligned lines"));
  }

  const lineConcepts = new Map<number, number[]>();
  if (!plainMode) {
    for (const match of result.matches) {
      const existing = lineConcepts.get(match.line) ?? [];
      existing.push(match.concept);
      lineConcepts.set(match.line, existing);
    }
    if (result.matches.length > 0) {
      const list = el("ul", "match-list");
      for (const match of result.matches) {
        const item = el(
          "li",
          "match-item",
          `${conceptLabel(match.concept)} → line ${match.line} (${formatScore(match.similarity)})`,
        );
        item.dataset.concept = String(match.concept);
        item.style.borderLeftColor = conceptColor(match.concept);
        list.appendChild(item);
      }
      card.appendChild(list);
    }
  }

  const pre = el("pre", "result-source");
  result.source.split("\n").forEach((lineText, lineIndex) => {
    const row = el("div", "code-line");
    row.dataset.line = String(lineIndex);
    const matched = !plainMode ? lineConcepts.get(lineIndex) : undefined;
    if (matched !== undefined) {
      row.classList.add("line-tint");
      row.dataset.concepts = matched.join(",");
      row.style.borderLeftColor = conceptColor(matched[0] as number);
      const tags = el("span", "line-tags", matched.map(conceptLabel).join(" "));
      row.appendChild(tags);
    }
    row.appendChild(el("span", "line-text", lineText));
    pre.appendChild(row);
  });
  card.appendChild(pre);
  return card;
}

export function renderResults(
  response: SearchResponse,
  plainMode: boolean,
): HTMLElement {
  const container = el("div", "results-view");
  response.results.forEach((result, i) => {
    container.appendChild(renderResult(result, response.concepts, plainMode, i + 1));
  });
  return container;
}

/** Side-by-side score columns for the previous and the refined query. */
export function renderComparison(
  previousQuery: string,
  previous: SearchResponse,
  currentQuery: string,
  current: SearchResponse,
): HTMLElement {
  const pane = el("div", "comparison-pane");
  pane.appendChild(el("h3", "comparison-title", "before / after"));
  const table = el("table", "comparison-table");
  const head = el("tr");
  head.appendChild(el("th", undefined, "candidate"));
  head.appendChild(el("th", "comparison-query", previousQuery));
  head.appendChild(el("th", "comparison-query", currentQuery));
  table.appendChild(head);

  const previousScores = new Map(previous.results.map((r) => [r.id, r.score]));
  const currentScores = new Map(current.results.map((r) => [r.id, r.score]));
  const ids = [...new Set([...previousScores.keys(), ...currentScores.keys()])];
  for (const id of ids) {
    const row = el("tr");
    row.dataset.candidate = id;
    row.appendChild(el("td", undefined, id));
    const before = previousScores.get(id);
    const after = currentScores.get(id);
    row.appendChild(el("td", "score-before", before === undefined ? "-" : formatScore(before)));
    row.appendChild(el("td", "score-after", after === undefined ? "-" : formatScore(after)));
    table.appendChild(row);
  }
  pane.appendChild(table);
  return pane;
}

/** Error banner with a toggle revealing the raw payload. */
export function renderErrorBanner(message: string, raw?: unknown, retry?: () => void): HTMLElement {
  const banner = el("div", "error-banner");
  banner.appendChild(el("span", "error-message", message));
  if (retry) {
    const button = el("button", "retry-button", "retry");
    button.addEventListener("click", retry);
    banner.appendChild(button);
  }
  if (raw !== undefined) {
    const toggle = el("button", "raw-toggle", "show raw payload");
    const payload = el("pre", "raw-payload", JSON.stringify(raw, null, 2));
    payload.hidden = true;
    toggle.addEventListener("click", () => {
      payload.hidden = !payload.hidden;
      toggle.textContent = payload.hidden ? "show raw payload" : "hide raw payload";
    });
    banner.appendChild(toggle);
    banner.appendChild(payload);
  }
  return banner;
}
