// Offline-safe submission queue.
//
// Answers that fail to reach the server are kept (durably, when a storage
// is provided) and replayed exactly once after reconnection: a conflict
// response means the server already has the record, which counts as
// delivered.

export interface PendingSubmission {
  kind: "rating" | "pair";
  key: string; // task or pair id; one pending answer per key
  payload: Record<string, unknown>;
}

export interface StorageLike {
  getItem(k: string): string | null;
  setItem(k: string, v: string): void;
  removeItem(k: string): void;
}

export class MemoryStorage implements StorageLike {
  private m = new Map<string, string>();
  getItem(k: string) {
    return this.m.has(k) ? (this.m.get(k) as string) : null;
  }
  setItem(k: string, v: string) {
    this.m.set(k, v);
  }
  removeItem(k: string) {
    this.m.delete(k);
  }
}

const KEY = "unmask.pending";

export type Sender = (item: PendingSubmission) => Promise<void>;

export class OfflineQueue {
  private items: PendingSubmission[] = [];

  constructor(private storage: StorageLike = new MemoryStorage()) {
    const raw = this.storage.getItem(KEY);
    if (raw) {
      try {
        this.items = JSON.parse(raw) as PendingSubmission[];
      } catch {
        this.items = [];
      }
    }
  }

  get length(): number {
    return this.items.length;
  }

  enqueue(item: PendingSubmission) {
    if (!this.items.some((x) => x.kind === item.kind && x.key === item.key)) {
      this.items.push(item);
      this.persist();
    }
  }

  private persist() {
    this.storage.setItem(KEY, JSON.stringify(this.items));
  }

  /** Replay everything; each item leaves the queue exactly once on success
   * or conflict, and stays for the next attempt on network failure. */
  async flush(send: Sender, isConflict: (e: unknown) => boolean): Promise<number> {
    let delivered = 0;
    const remaining: PendingSubmission[] = [];
    for (const item of this.items) {
      try {
        await send(item);
        delivered += 1;
      } catch (err) {
        if (isConflict(err)) {
          delivered += 1; // server already has it
        } else {
          remaining.push(item);
        }
      }
    }
    this.items = remaining;
    this.persist();
    return delivered;
  }
}
