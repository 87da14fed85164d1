/**
 * Minimal client for the search service. Network problems and invalid
 * payloads are distinguishable (NetworkError vs SchemaError) so the UI can
 * offer a retry banner for the former and a raw-payload view for the latter.
 */

import { parseSearchResponse, SearchResponse } from "./schema.js";

export interface ThresholdOverrides {
  deltaHighlight?: number;
  deltaCluster?: number;
}

export interface SearchRequestBody {
  query: string;
  top_k: number;
  delta_highlight?: number;
  delta_cluster?: number;
}

export class NetworkError extends Error {
  constructor(message: string, public readonly status?: number) {
    super(message);
    this.name = "NetworkError";
  }
}

/** Overrides are only present in the payload when the user set them. */
export function buildRequestBody(
  query: string,
  topK: number,
  overrides: ThresholdOverrides = {},
): SearchRequestBody {
  const body: SearchRequestBody = { query, top_k: topK };
  if (overrides.deltaHighlight !== undefined) body.delta_highlight = overrides.deltaHighlight;
  if (overrides.deltaCluster !== undefined) body.delta_cluster = overrides.deltaCluster;
  return body;
}

export class SearchClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  async search(
    query: string,
    topK: number,
    overrides: ThresholdOverrides = {},
    signal?: AbortSignal,
  ): Promise<SearchResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/v1/search`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(buildRequestBody(query, topK, overrides)),
        signal,
      });
    } catch (error) {
      if (error instanceof DOMException && error.name === "AbortError") throw error;
      throw new NetworkError(`search request failed: ${String(error)}`);
    }
    if (!response.ok) {
      throw new NetworkError(`search returned HTTP ${response.status}`, response.status);
    }
    let payload: unknown;
    try {
      payload = await response.json();
    } catch (error) {
      throw new NetworkError(`search response is not JSON: ${String(error)}`);
    }
    return parseSearchResponse(payload);
  }
}
