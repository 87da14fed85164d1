import { readFileSync } from "node:fs";
import { join } from "node:path";

import { parseSearchResponse, SearchResponse } from "../src/schema.js";

// vitest runs with the package root as cwd; import.meta.url is unusable
// for file access under the happy-dom environment
export function loadFixture(name: string): { raw: unknown; response: SearchResponse } {
  const raw = JSON.parse(
    readFileSync(join(process.cwd(), "tests", "fixtures", name), "utf-8"),
  );
  return { raw, response: parseSearchResponse(raw) };
}

/** The query text the main fixture was recorded with. */
export const FIXTURE_QUERY = "merge dictionaries";

export function okJson(payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status: 200,
    headers: { "Content-Type": "application/json" },
  });
}
