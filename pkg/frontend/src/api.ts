/** Thin typed client for the recommendation service's JSON endpoints. */

export interface RecommendedItem {
  id: string;
  surface_form: string;
  score: number;
}

export interface RecommendResponse {
  items: RecommendedItem[];
  model_version: string;
  dropped_context: string[];
}

export interface EntitySuggestion {
  id: string;
  surface_form: string;
  is_item: boolean;
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      throw new ApiError(response.status, `${path}: HTTP ${response.status}`);
    }
    return response.json();
  }

  async recommend(context: string[], k: number): Promise<RecommendResponse> {
    const body = JSON.stringify({ context, k });
    return (await this.request("/recommend", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body,
    })) as RecommendResponse;
  }

  async entities(q: string, limit = 20): Promise<EntitySuggestion[]> {
    const params = new URLSearchParams({ q, limit: String(limit) });
    return (await this.request(`/entities?${params}`)) as EntitySuggestion[];
  }

  async health(): Promise<{ status: string; model_version: string }> {
    return (await this.request("/health")) as {
      status: string;
      model_version: string;
    };
  }
}
