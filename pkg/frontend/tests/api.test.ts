import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { stubClient, tenItems } from "./helpers.js";

describe("ApiClient", () => {
  it("posts the recommend payload as JSON", async () => {
    const { client, requests } = stubClient(() => ({
      items: tenItems(),
      model_version: "v1",
      dropped_context: ["zzz"],
    }));
    const response = await client.recommend(["a", "b"], 5);
    expect(requests[0].path).toBe("/recommend");
    expect(requests[0].body).toEqual({ context: ["a", "b"], k: 5 });
    expect(response.items).toHaveLength(10);
    expect(response.dropped_context).toEqual(["zzz"]);
  });

  it("encodes the entities query string", async () => {
    const { client, requests } = stubClient(() => []);
    await client.entities("fast & loose", 7);
    expect(requests[0].path).toBe("/entities?q=fast+%26+loose&limit=7");
  });

  it("prefixes a base URL", async () => {
    const { requests } = stubClient(() => ({ status: "ok" }));
    const fetchFn = async (input: string) => {
      requests.push({ path: input });
      return new Response(
        JSON.stringify({ status: "ok", model_version: "v" }),
        { status: 200 },
      );
    };
    const remote = new ApiClient("http://host:8023", fetchFn);
    await remote.health();
    expect(requests[0].path).toBe("http://host:8023/health");
  });

  it("raises ApiError with the status on non-2xx", async () => {
    const failing = new ApiClient(
      "",
      async () => new Response("no", { status: 400 }),
    );
    await expect(failing.recommend([], 0)).rejects.toMatchObject({
      status: 400,
    });
    await expect(failing.recommend([], 0)).rejects.toBeInstanceOf(ApiError);
  });
});
