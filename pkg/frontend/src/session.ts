/**
 * Session state: the current and previous responses (for side-by-side
 * comparison after a refinement), threshold overrides, plain-mode flag, and
 * session-local accept/reject marks with timestamps.
 *
 * One search is in flight at a time: a newer run aborts the previous request
 * and stale responses are dropped by generation counter, never rendered.
 */

import { NetworkError, SearchClient, ThresholdOverrides } from "./api.js";
import { SearchResponse } from "./schema.js";

export type Verdict = "accept" | "reject";

export interface DecisionMark {
  candidateId: string;
  verdict: Verdict;
  query: string;
  at: string; // ISO timestamp
}

export interface SessionSnapshot {
  query: string;
  response: SearchResponse;
}

export class ConsoleSession {
  query = "";
  topK = 5;
  overrides: ThresholdOverrides = {};
  plainMode = false;
  current: SessionSnapshot | null = null;
  previous: SessionSnapshot | null = null;

  private marks = new Map<string, DecisionMark>();
  private generation = 0;
  private controller: AbortController | null = null;

  constructor(
    private readonly client: SearchClient,
    private readonly now: () => Date = () => new Date(),
  ) {}

  /**
   * Run (or re-run) a search. The previous successful response is kept for
   * comparison; on failure the session state is untouched and the error
   * propagates for the banner. Returns null when a newer run superseded
   * this one before it finished.
   */
  async run(query: string): Promise<SearchResponse | null> {
    const generation = ++this.generation;
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    let response: SearchResponse;
    try {
      response = await this.client.search(query, this.topK, this.overrides, controller.signal);
    } catch (error) {
      if (generation === this.generation) this.controller = null;
      if (error instanceof DOMException && error.name === "AbortError") return null;
      throw error;
    }
    if (generation !== this.generation) return null; // stale; a newer run won
    this.controller = null;
    if (this.current) this.previous = this.current;
    this.current = { query, response };
    this.query = query;
    return response;
  }

  setOverrides(overrides: ThresholdOverrides): void {
    this.overrides = { ...overrides };
  }

  togglePlainMode(): boolean {
    this.plainMode = !this.plainMode;
    return this.plainMode;
  }

  mark(candidateId: string, verdict: Verdict): DecisionMark {
    const decision: DecisionMark = {
      candidateId,
      verdict,
      query: this.query,
      at: this.now().toISOString(),
    };
    this.marks.set(candidateId, decision);
    return decision;
  }

  markOf(candidateId: string): DecisionMark | undefined {
    return this.marks.get(candidateId);
  }

  /** Session-local decisions as a JSON document (no server persistence). */
  exportMarks(): string {
    return JSON.stringify([...this.marks.values()], null, 2);
  }
}

export function isRetryable(error: unknown): boolean {
  return error instanceof NetworkError;
}
