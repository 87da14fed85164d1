/**
 * Wire types for POST /v1/search and a structural validator.
 *
 * The console never recomputes anything the service already decided: every
 * highlight offset, matched line, similarity, and score is taken verbatim
 * from a validated response. A payload that fails validation is surfaced
 * through SchemaError together with the raw value so the UI can offer a
 * raw-payload toggle.
 */

export interface ConceptView {
  id: number;
  /** [start, end) character offsets into the query text, one per token. */
  token_spans: [number, number][];
  fallback: boolean;
}

export interface MatchView {
  concept: number;
  /** 0-based physical line in the candidate source. */
  line: number;
  similarity: number;
}

export interface ResultView {
  id: string;
  score: number;
  degenerate: boolean;
  matches: MatchView[];
  source: string;
}

export interface SearchResponse {
  concepts: ConceptView[];
  results: ResultView[];
}

export class SchemaError extends Error {
  constructor(message: string, public readonly raw: unknown) {
    super(message);
    this.name = "SchemaError";
  }
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function fail(path: string, expected: string, raw: unknown): never {
  throw new SchemaError(`${path}: expected ${expected}`, raw);
}

function asNumber(value: unknown, path: string, raw: unknown): number {
  if (typeof value !== "number" || Number.isNaN(value)) fail(path, "a number", raw);
  return value;
}

function asString(value: unknown, path: string, raw: unknown): string {
  if (typeof value !== "string") fail(path, "a string", raw);
  return value;
}

function asBoolean(value: unknown, path: string, raw: unknown): boolean {
  if (typeof value !== "boolean") fail(path, "a boolean", raw);
  return value;
}

function asArray(value: unknown, path: string, raw: unknown): unknown[] {
  if (!Array.isArray(value)) fail(path, "an array", raw);
  return value;
}

function parseConcept(value: unknown, path: string, raw: unknown): ConceptView {
  if (!isRecord(value)) fail(path, "an object", raw);
  const spans = asArray(value.token_spans, `${path}.token_spans`, raw).map((span, i) => {
    const pair = asArray(span, `${path}.token_spans[${i}]`, raw);
    if (pair.length !== 2) fail(`${path}.token_spans[${i}]`, "a [start, end] pair", raw);
    const start = asNumber(pair[0], `${path}.token_spans[${i}][0]`, raw);
    const end = asNumber(pair[1], `${path}.token_spans[${i}][1]`, raw);
    if (start < 0 || end < start) fail(`${path}.token_spans[${i}]`, "0 <= start <= end", raw);
    return [start, end] as [number, number];
  });
  return {
    id: asNumber(value.id, `${path}.id`, raw),
    token_spans: spans,
    fallback: asBoolean(value.fallback, `${path}.fallback`, raw),
  };
}

function parseMatch(value: unknown, path: string, raw: unknown): MatchView {
  if (!isRecord(value)) fail(path, "an object", raw);
  return {
    concept: asNumber(value.concept, `${path}.concept`, raw),
    line: asNumber(value.line, `${path}.line`, raw),
    similarity: asNumber(value.similarity, `${path}.similarity`, raw),
  };
}

function parseResult(value: unknown, path: string, raw: unknown): ResultView {
  if (!isRecord(value)) fail(path, "an object", raw);
  return {
    id: asString(value.id, `${path}.id`, raw),
    score: asNumber(value.score, `${path}.score`, raw),
    degenerate: asBoolean(value.degenerate, `${path}.degenerate`, raw),
    matches: asArray(value.matches, `${path}.matches`, raw).map((m, i) =>
      parseMatch(m, `${path}.matches[${i}]`, raw),
    ),
    source: asString(value.source, `${path}.source`, raw),
  };
}

/** Validate a decoded /v1/search payload. Unknown extra keys are ignored. */
export function parseSearchResponse(raw: unknown): SearchResponse {
  if (!isRecord(raw)) fail("response", "an object", raw);
  const concepts = asArray(raw.concepts, "response.concepts", raw).map((c, i) =>
    parseConcept(c, `response.concepts[${i}]`, raw),
  );
  const results = asArray(raw.results, "response.results", raw).map((r, i) =>
    parseResult(r, `response.results[${i}]`, raw),
  );
  for (const result of results) {
    for (const match of result.matches) {
      if (match.concept < 0 || match.concept >= concepts.length) {
        fail(`response.results[${result.id}]`, "match.concept within concepts", raw);
      }
    }
  }
  return { concepts, results };
}
