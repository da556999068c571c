import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionState } from "../src/session.js";
import { stubClient, tenItems } from "./helpers.js";

function recommendStub() {
  return stubClient((path) => {
    if (path.startsWith("/recommend")) {
      return {
        items: tenItems(),
        model_version: "toy@epoch1",
        dropped_context: [],
      };
    }
    throw new Error(`unexpected ${path}`);
  });
}

describe("scripted session", () => {
  it("tagging two mentions and submitting yields a 10-item list", async () => {
    const { client, requests } = recommendStub();
    const session = new SessionState(client);
    session.tagMention({ id: "p99", surfaceForm: "Keanu Reeves" });
    session.tagMention({ id: "m123", surfaceForm: "The Matrix" });
    await session.submitTurn("something like this");

    expect(session.recommendations).toHaveLength(10);
    expect(session.modelVersion).toBe("toy@epoch1");
    expect(session.error).toBeNull();
    expect(requests[0].body).toEqual({ context: ["p99", "m123"], k: 10 });
  });

  it("clicking a result inserts it into the next turn's mentions", async () => {
    const { client, requests } = recommendStub();
    const session = new SessionState(client);
    session.tagMention({ id: "p99", surfaceForm: "Keanu Reeves" });
    await session.submitTurn("first");

    session.pickRecommendation(session.recommendations[0]);
    expect(session.pendingMentions.map((m) => m.id)).toEqual(["m0"]);

    await session.submitTurn("second");
    expect(session.turns[1].mentions).toEqual(["m0"]);
    // the outgoing payload is the ordered mention concatenation
    expect(requests[1].body).toEqual({ context: ["p99", "m0"], k: 10 });
  });

  it("sends the full ordered mention sequence on every turn", async () => {
    const { client, requests } = recommendStub();
    const session = new SessionState(client);
    const tagged = [["a1", "m2"], ["m3"], ["a4", "m5", "m6"]];
    for (const turn of tagged) {
      for (const id of turn) {
        session.tagMention({ id, surfaceForm: id });
      }
      await session.submitTurn("...");
    }
    const contexts = requests.map((r) => (r.body as { context: string[] }).context);
    expect(contexts).toEqual([
      ["a1", "m2"],
      ["a1", "m2", "m3"],
      ["a1", "m2", "m3", "a4", "m5", "m6"],
    ]);
  });

  it("honors the k setting", async () => {
    const { client, requests } = recommendStub();
    const session = new SessionState(client);
    session.k = 3;
    await session.submitTurn("hi");
    expect((requests[0].body as { k: number }).k).toBe(3);
  });

  it("untagging removes a pending mention before submission", async () => {
    const { client, requests } = recommendStub();
    const session = new SessionState(client);
    session.tagMention({ id: "a", surfaceForm: "a" });
    session.tagMention({ id: "b", surfaceForm: "b" });
    session.untagMention(0);
    await session.submitTurn("x");
    expect((requests[0].body as { context: string[] }).context).toEqual(["b"]);
  });

  it("reset clears the dialog and requests the cold-start list", async () => {
    const { client, requests } = recommendStub();
    const session = new SessionState(client);
    session.tagMention({ id: "m1", surfaceForm: "x" });
    await session.submitTurn("hello");
    await session.reset();

    expect(session.turns).toEqual([]);
    expect(session.pendingMentions).toEqual([]);
    expect(session.recommendations).toHaveLength(10);
    expect((requests[1].body as { context: string[] }).context).toEqual([]);
  });
});

describe("failure handling", () => {
  it("unreachable service raises a banner and preserves state", async () => {
    const failing = new ApiClient("", async () => {
      throw new Error("connection refused");
    });
    const session = new SessionState(failing);
    session.tagMention({ id: "m1", surfaceForm: "x" });
    await session.submitTurn("hello");

    expect(session.error).toContain("service unreachable");
    expect(session.turns).toHaveLength(1);
    expect(session.turns[0].mentions).toEqual(["m1"]);
  });

  it("recovers after the service comes back", async () => {
    let up = false;
    const flaky = new ApiClient("", async () => {
      if (!up) throw new Error("down");
      return new Response(
        JSON.stringify({
          items: tenItems(),
          model_version: "v",
          dropped_context: [],
        }),
        { status: 200 },
      );
    });
    const session = new SessionState(flaky);
    await session.submitTurn("one");
    expect(session.error).not.toBeNull();
    up = true;
    await session.submitTurn("two");
    expect(session.error).toBeNull();
    expect(session.recommendations).toHaveLength(10);
  });

  it("a stale response never overwrites a newer one", async () => {
    const resolvers: Array<(r: Response) => void> = [];
    const client = new ApiClient(
      "",
      (_input, init) =>
        new Promise((resolve) => {
          const body = JSON.parse(String(init?.body));
          resolvers.push(() =>
            resolve(
              new Response(
                JSON.stringify({
                  items: tenItems(`ctx${body.context.length}-`),
                  model_version: "v",
                  dropped_context: [],
                }),
                { status: 200 },
              ),
            ),
          );
        }),
    );
    const session = new SessionState(client);
    session.tagMention({ id: "a", surfaceForm: "a" });
    const first = session.submitTurn("one");
    session.tagMention({ id: "b", surfaceForm: "b" });
    const second = session.submitTurn("two");
    // the older request resolves after the newer one: latest wins
    resolvers[1](undefined as never);
    await second;
    resolvers[0](undefined as never);
    await first;
    expect(session.recommendations[0].id).toBe("ctx2-0");
  });
});
