import { ApiClient, RecommendedItem } from "../src/api.js";

export interface RecordedRequest {
  path: string;
  body?: unknown;
}

export function tenItems(prefix = "m"): RecommendedItem[] {
  return Array.from({ length: 10 }, (_, i) => ({
    id: `${prefix}${i}`,
    surface_form: `Movie ${i}`,
    score: 1 - i / 10,
  }));
}

/** ApiClient whose transport records requests and replays canned bodies. */
export function stubClient(
  respond: (path: string, body?: unknown) => unknown,
): { client: ApiClient; requests: RecordedRequest[] } {
  const requests: RecordedRequest[] = [];
  const fetchFn = async (input: string, init?: RequestInit) => {
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    requests.push({ path: input, body });
    const payload = respond(input, body);
    return new Response(JSON.stringify(payload), {
      status: 200,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { client: new ApiClient("", fetchFn), requests };
}
