// Typed client for the rating-service JSON API.

export interface Progress {
  done: number;
  total: number;
}

export interface MosTask {
  task_id: string;
  utterance: string;
  audio_url: string;
  progress: Progress;
}

export interface PairTask {
  pair_id: string;
  first_url: string;
  second_url: string;
  progress: Progress;
}

export interface DoneMarker {
  done: true;
  progress: Progress;
}

export interface SessionInfo {
  rater_id: string;
  mos_total: number;
  pair_total: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path);
    if (!res.ok) throw new ApiError(res.status, await res.text());
    return (await res.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new ApiError(res.status, await res.text());
    return (await res.json()) as T;
  }

  newSession(): Promise<SessionInfo> {
    return this.post<SessionInfo>("/api/session", {});
  }

  nextTask(raterId: string): Promise<MosTask | DoneMarker> {
    return this.get(`/api/task?rater_id=${encodeURIComponent(raterId)}`);
  }

  submitRating(raterId: string, taskId: string, score: number, playCount: number) {
    return this.post<{ ok: boolean; progress: Progress }>("/api/rating", {
      rater_id: raterId,
      task_id: taskId,
      score,
      play_count: playCount,
    });
  }

  nextPair(raterId: string): Promise<PairTask | DoneMarker> {
    return this.get(`/api/pair?rater_id=${encodeURIComponent(raterId)}`);
  }

  submitPairResponse(raterId: string, pairId: string, answer: string) {
    return this.post<{ ok: boolean; progress: Progress }>("/api/pair-response", {
      rater_id: raterId,
      pair_id: pairId,
      answer,
    });
  }

  status(): Promise<Record<string, unknown>> {
    return this.get("/api/status");
  }
}

export function isDone(t: MosTask | PairTask | DoneMarker): t is DoneMarker {
  return (t as DoneMarker).done === true;
}
