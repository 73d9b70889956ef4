import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api";
import { MemoryStorage, OfflineQueue } from "../src/queue";
import { MOS_SCORES, PAIR_ANSWERS, Session } from "../src/session";

// Minimal fake of the rating service, mirroring its flow and error codes.
class FakeServer {
  tasks = [
    { task_id: "m0", utterance: "m0", audio_url: "/audio/m0" },
    { task_id: "m1", utterance: "m1", audio_url: "/audio/m1" },
  ];
  pairs = [{ pair_id: "p0", first_url: "/audio/p0c", second_url: "/audio/p0o" }];
  ratings: Record<string, number> = {};
  answers: Record<string, string> = {};
  offline = false;

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    if (this.offline) throw new TypeError("network down");
    const body = init?.body ? JSON.parse(init.body as string) : {};
    const json = (status: number, data: unknown) =>
      new Response(JSON.stringify(data), { status });

    if (url.endsWith("/api/session")) {
      return json(200, { rater_id: "r-test", mos_total: 2, pair_total: 1 });
    }
    if (url.includes("/api/task")) {
      const remaining = this.tasks.filter((t) => !(t.task_id in this.ratings));
      const progress = { done: 2 - remaining.length, total: 2 };
      return remaining.length
        ? json(200, { ...remaining[0], progress })
        : json(200, { done: true, progress });
    }
    if (url.endsWith("/api/rating")) {
      if (body.score < 1 || body.score > 5) return json(422, { detail: "bad score" });
      if (body.task_id in this.ratings) return json(409, { detail: "duplicate" });
      this.ratings[body.task_id] = body.score;
      return json(200, { ok: true, progress: { done: Object.keys(this.ratings).length, total: 2 } });
    }
    if (url.includes("/api/pair-response")) {
      if (body.pair_id in this.answers) return json(409, { detail: "duplicate" });
      this.answers[body.pair_id] = body.answer;
      return json(200, { ok: true, progress: { done: 1, total: 1 } });
    }
    if (url.includes("/api/pair")) {
      const remaining = this.pairs.filter((p) => !(p.pair_id in this.answers));
      const progress = { done: 1 - remaining.length, total: 1 };
      return remaining.length
        ? json(200, { ...remaining[0], progress })
        : json(200, { done: true, progress });
    }
    return json(404, { detail: "unknown" });
  };
}

function makeSession(server: FakeServer) {
  const storage = new MemoryStorage();
  return new Session(new ApiClient("", server.fetch), new OfflineQueue(storage), storage);
}

describe("mos flow", () => {
  it("exposes exactly five discrete score choices", () => {
    expect(MOS_SCORES).toEqual([1, 2, 3, 4, 5]);
  });

  it("locks submission until the clip was played", async () => {
    const server = new FakeServer();
    const s = makeSession(server);
    await s.start();
    await s.advance();
    expect(s.canSubmit()).toBe(false);
    await expect(s.submitScore(3)).rejects.toThrow(/play/i);
    s.notePlayback("m0");
    expect(s.canSubmit()).toBe(true);
    await s.submitScore(3);
    expect(server.ratings).toEqual({ m0: 3 });
  });

  it("rejects out-of-range scores client-side", async () => {
    const server = new FakeServer();
    const s = makeSession(server);
    await s.start();
    await s.advance();
    s.notePlayback("m0");
    await expect(s.submitScore(6)).rejects.toThrow(/1\.\.5/);
  });

  it("advances progress by exactly one per ack", async () => {
    const server = new FakeServer();
    const s = makeSession(server);
    await s.start();
    await s.advance();
    const before = s.progress.done;
    s.notePlayback("m0");
    await s.submitScore(4);
    expect(s.progress.done).toBe(before + 1);
    await s.advance();
    expect((s.current as { task_id: string }).task_id).toBe("m1");
  });

  it("reaches the done marker after the last task", async () => {
    const server = new FakeServer();
    const s = makeSession(server);
    await s.start();
    for (const id of ["m0", "m1"]) {
      await s.advance();
      s.notePlayback(id);
      await s.submitScore(5);
    }
    await s.advance();
    expect(s.finished).toBe(true);
    expect(s.current).toBeNull();
  });

  it("maps keyboard digits to scores only in mos mode", async () => {
    const server = new FakeServer();
    const s = makeSession(server);
    expect(s.keyToScore("4")).toBe(4);
    expect(s.keyToScore("9")).toBeNull();
    expect(s.keyToScore("x")).toBeNull();
    s.setMode("pair");
    expect(s.keyToScore("4")).toBeNull();
  });
});

describe("pair flow", () => {
  it("offers exactly the four answers", () => {
    expect([...PAIR_ANSWERS]).toEqual(["first", "second", "both", "none"]);
  });

  it("requires both clips played and keeps server ordering", async () => {
    const server = new FakeServer();
    const s = makeSession(server);
    await s.start();
    s.setMode("pair");
    await s.advance();
    const pair = s.current as { pair_id: string; first_url: string; second_url: string };
    // the client renders exactly the URLs the server sent, in order
    expect(pair.first_url).toBe("/audio/p0c");
    expect(pair.second_url).toBe("/audio/p0o");
    expect(s.canSubmit()).toBe(false);
    s.notePlayback("p0:first");
    expect(s.canSubmit()).toBe(false);
    s.notePlayback("p0:second");
    expect(s.canSubmit()).toBe(true);
    await s.submitPairAnswer("both");
    expect(server.answers).toEqual({ p0: "both" });
  });

  it("never holds hidden-truth fields in state or payloads", async () => {
    const server = new FakeServer();
    const s = makeSession(server);
    await s.start();
    s.setMode("pair");
    await s.advance();
    const blob = JSON.stringify(s.current).toLowerCase();
    for (const word of ["mask_type", "correct", "truth", "n95", "cotton", "plastic", "clean"]) {
      expect(blob).not.toContain(word);
    }
  });
});

describe("offline handling", () => {
  it("queues an answer while offline and replays it exactly once", async () => {
    const server = new FakeServer();
    const storage = new MemoryStorage();
    const queue = new OfflineQueue(storage);
    const s = new Session(new ApiClient("", server.fetch), queue, storage);
    await s.start();
    await s.advance();
    s.notePlayback("m0");
    server.offline = true;
    expect(await s.submitScore(2)).toBe("queued");
    expect(queue.length).toBe(1);

    server.offline = false;
    expect(await s.flushQueue()).toBe(1);
    expect(server.ratings).toEqual({ m0: 2 });
    expect(queue.length).toBe(0);
    // second flush is a no-op; a manual retry hits the 409 path and drains
    expect(await s.flushQueue()).toBe(0);
    expect(server.ratings).toEqual({ m0: 2 });
  });

  it("treats a conflict during replay as already delivered", async () => {
    const server = new FakeServer();
    const storage = new MemoryStorage();
    const queue = new OfflineQueue(storage);
    const s = new Session(new ApiClient("", server.fetch), queue, storage);
    await s.start();
    await s.advance();
    s.notePlayback("m0");
    server.offline = true;
    await s.submitScore(2);
    server.offline = false;
    server.ratings["m0"] = 2; // delivered through another path meanwhile
    expect(await s.flushQueue()).toBe(1);
    expect(queue.length).toBe(0);
  });

  it("persists the queue across reloads via storage", async () => {
    const server = new FakeServer();
    const storage = new MemoryStorage();
    const s = new Session(new ApiClient("", server.fetch), new OfflineQueue(storage), storage);
    await s.start();
    await s.advance();
    s.notePlayback("m0");
    server.offline = true;
    await s.submitScore(1);
    const reloaded = new OfflineQueue(storage);
    expect(reloaded.length).toBe(1);
  });
});

describe("environment checklist", () => {
  it("shows once per session storage", () => {
    const server = new FakeServer();
    const storage = new MemoryStorage();
    const s = new Session(new ApiClient("", server.fetch), new OfflineQueue(storage), storage);
    expect(s.needsChecklist()).toBe(true);
    s.acknowledgeChecklist();
    expect(s.needsChecklist()).toBe(false);
    const again = new Session(new ApiClient("", server.fetch), new OfflineQueue(storage), storage);
    expect(again.needsChecklist()).toBe(false);
  });
});

describe("api client errors", () => {
  it("surfaces http errors with status codes", async () => {
    const server = new FakeServer();
    const api = new ApiClient("", server.fetch);
    await expect(api.submitRating("r", "mX", 9, 1)).rejects.toMatchObject({ status: 422 });
    expect(new ApiError(409, "dup").status).toBe(409);
  });
});
