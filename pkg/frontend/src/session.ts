// Session state machine for one rater in one browser tab.
//
// Holds the current task, play-count gating (controls stay disabled until
// the audio has been played at least once), progress, and the one-time
// environment checklist flag.  The server stays the source of truth; this
// object never sees condition labels or pair ground truth.

import { ApiClient, ApiError, DoneMarker, MosTask, PairTask, isDone } from "./api.js";
import { OfflineQueue, StorageLike, MemoryStorage, PendingSubmission } from "./queue.js";

export type Mode = "mos" | "pair";

export const PAIR_ANSWERS = ["first", "second", "both", "none"] as const;
export type PairAnswer = (typeof PAIR_ANSWERS)[number];

export const MOS_SCORES = [1, 2, 3, 4, 5] as const;

const CHECKLIST_KEY = "unmask.checklist.shown";

export class Session {
  raterId: string | null = null;
  mode: Mode = "mos";
  current: MosTask | PairTask | null = null;
  finished = false;
  progress = { done: 0, total: 0 };
  playCounts = new Map<string, number>();

  constructor(
    private api: ApiClient,
    private queue: OfflineQueue = new OfflineQueue(),
    private storage: StorageLike = new MemoryStorage(),
  ) {}

  needsChecklist(): boolean {
    return this.storage.getItem(CHECKLIST_KEY) === null;
  }

  acknowledgeChecklist() {
    this.storage.setItem(CHECKLIST_KEY, "1");
  }

  async start(): Promise<void> {
    const info = await this.api.newSession();
    this.raterId = info.rater_id;
  }

  setMode(mode: Mode) {
    this.mode = mode;
    this.current = null;
    this.finished = false;
  }

  /** Count one playback of the given audio element; unlocks submission. */
  notePlayback(key: string) {
    this.playCounts.set(key, (this.playCounts.get(key) ?? 0) + 1);
  }

  playCount(key: string): number {
    return this.playCounts.get(key) ?? 0;
  }

  /** Submission stays locked until every clip of the task was played. */
  canSubmit(): boolean {
    if (!this.current) return false;
    if (this.mode === "mos") {
      const t = this.current as MosTask;
      return this.playCount(t.task_id) > 0;
    }
    const p = this.current as PairTask;
    return this.playCount(p.pair_id + ":first") > 0 && this.playCount(p.pair_id + ":second") > 0;
  }

  async advance(): Promise<void> {
    if (!this.raterId) throw new Error("session not started");
    const next =
      this.mode === "mos"
        ? await this.api.nextTask(this.raterId)
        : await this.api.nextPair(this.raterId);
    this.progress = next.progress;
    if (isDone(next)) {
      this.current = null;
      this.finished = true;
    } else {
      this.current = next;
      this.finished = false;
    }
  }

  /** Submit the current MOS rating; on network failure the answer is queued
   * and the UI may move on once connectivity returns. */
  async submitScore(score: number): Promise<"sent" | "queued"> {
    if (this.mode !== "mos" || !this.current) throw new Error("no rating task active");
    if (!MOS_SCORES.includes(score as (typeof MOS_SCORES)[number])) {
      throw new Error(`score must be 1..5, got ${score}`);
    }
    if (!this.canSubmit()) throw new Error("play the clip before rating it");
    const t = this.current as MosTask;
    const payload = {
      rater_id: this.raterId,
      task_id: t.task_id,
      score,
      play_count: this.playCount(t.task_id),
    };
    try {
      await this.api.submitRating(this.raterId as string, t.task_id, score, payload.play_count);
      this.progress = { ...this.progress, done: this.progress.done + 1 };
      return "sent";
    } catch (err) {
      if (err instanceof ApiError) throw err; // validation/conflict: surface it
      this.queue.enqueue({ kind: "rating", key: t.task_id, payload });
      return "queued";
    }
  }

  async submitPairAnswer(answer: PairAnswer): Promise<"sent" | "queued"> {
    if (this.mode !== "pair" || !this.current) throw new Error("no pair task active");
    if (!PAIR_ANSWERS.includes(answer)) throw new Error(`bad answer ${answer}`);
    if (!this.canSubmit()) throw new Error("play both clips before answering");
    const p = this.current as PairTask;
    const payload = { rater_id: this.raterId, pair_id: p.pair_id, answer };
    try {
      await this.api.submitPairResponse(this.raterId as string, p.pair_id, answer);
      this.progress = { ...this.progress, done: this.progress.done + 1 };
      return "sent";
    } catch (err) {
      if (err instanceof ApiError) throw err;
      this.queue.enqueue({ kind: "pair", key: p.pair_id, payload });
      return "queued";
    }
  }

  /** Replay queued answers after reconnection; conflicts count as delivered. */
  async flushQueue(): Promise<number> {
    return this.queue.flush(
      async (item: PendingSubmission) => {
        if (item.kind === "rating") {
          const p = item.payload as {
            rater_id: string;
            task_id: string;
            score: number;
            play_count: number;
          };
          await this.api.submitRating(p.rater_id, p.task_id, p.score, p.play_count);
        } else {
          const p = item.payload as { rater_id: string; pair_id: string; answer: string };
          await this.api.submitPairResponse(p.rater_id, p.pair_id, p.answer);
        }
      },
      (err) => err instanceof ApiError && err.status === 409,
    );
  }

  /** Keyboard shortcut handler: digits 1..5 submit MOS scores. */
  keyToScore(key: string): number | null {
    const n = Number(key);
    return this.mode === "mos" && Number.isInteger(n) && n >= 1 && n <= 5 ? n : null;
  }
}
