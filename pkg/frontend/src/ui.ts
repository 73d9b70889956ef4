// DOM layer: renders the session state and forwards user events.
// Kept deliberately thin; everything testable lives in session.ts.

import { ApiClient } from "./api.js";
import { MosTask, PairTask } from "./api.js";
import { OfflineQueue, StorageLike } from "./queue.js";
import { MOS_SCORES, PAIR_ANSWERS, PairAnswer, Session } from "./session.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export class App {
  private session: Session;
  private root: HTMLElement;

  constructor(root: HTMLElement, baseUrl = "") {
    const storage = window.localStorage as unknown as StorageLike;
    this.session = new Session(new ApiClient(baseUrl), new OfflineQueue(storage), storage);
    this.root = root;
    window.addEventListener("online", () => void this.session.flushQueue());
    window.addEventListener("keydown", (e) => {
      const score = this.session.keyToScore(e.key);
      if (score !== null && this.session.canSubmit()) void this.rate(score);
    });
  }

  async start() {
    if (this.session.needsChecklist()) {
      this.renderChecklist();
    } else {
      await this.begin();
    }
  }

  private renderChecklist() {
    this.root.replaceChildren();
    const box = el("div", { class: "card" });
    box.append(el("h2", {}, "Before you start"));
    const list = el("ul");
    for (const item of [
      "Find a quiet room without background noise.",
      "Use headphones if you can.",
      "Set a comfortable playback volume with the first clip.",
    ]) {
      list.append(el("li", {}, item));
    }
    const ok = el("button", { class: "primary" }, "I'm ready");
    ok.addEventListener("click", () => {
      this.session.acknowledgeChecklist();
      void this.begin();
    });
    box.append(list, ok);
    this.root.append(box);
  }

  private async begin() {
    await this.session.start();
    await this.session.advance();
    this.render();
  }

  private async rate(score: number) {
    await this.session.submitScore(score);
    await this.session.advance();
    this.render();
  }

  private async answerPair(answer: PairAnswer) {
    await this.session.submitPairAnswer(answer);
    await this.session.advance();
    this.render();
  }

  private render() {
    this.root.replaceChildren();
    const bar = el("div", { class: "topbar" });
    const { done, total } = this.session.progress;
    bar.append(el("span", { class: "progress" }, `${done} / ${total}`));
    for (const mode of ["mos", "pair"] as const) {
      const b = el("button", {}, mode === "mos" ? "Rate clips" : "Compare pairs");
      b.addEventListener("click", async () => {
        this.session.setMode(mode);
        await this.session.advance();
        this.render();
      });
      bar.append(b);
    }
    this.root.append(bar);

    if (this.session.finished || !this.session.current) {
      this.root.append(el("p", { class: "done" }, "All tasks answered. Thank you!"));
      return;
    }
    if (this.session.mode === "mos") this.renderMos(this.session.current as MosTask);
    else this.renderPair(this.session.current as PairTask);
  }

  private audio(url: string, key: string, onPlay: () => void): HTMLAudioElement {
    const player = el("audio", { controls: "", src: url, preload: "auto" });
    player.addEventListener("play", () => {
      this.session.notePlayback(key);
      onPlay();
    });
    return player;
  }

  private renderMos(task: MosTask) {
    const card = el("div", { class: "card" });
    card.append(el("h2", {}, "How natural does this clip sound?"));
    const buttons: HTMLButtonElement[] = [];
    card.append(
      this.audio(task.audio_url, task.task_id, () =>
        buttons.forEach((b) => (b.disabled = !this.session.canSubmit())),
      ),
    );
    const row = el("div", { class: "choices" });
    for (const score of MOS_SCORES) {
      const b = el("button", { class: "score" }, String(score));
      b.disabled = true;
      b.addEventListener("click", () => void this.rate(score));
      buttons.push(b);
      row.append(b);
    }
    card.append(row, el("p", { class: "hint" }, "1 = bad, 5 = excellent. Keys 1-5 work too."));
    this.root.append(card);
  }

  private renderPair(pair: PairTask) {
    const card = el("div", { class: "card" });
    card.append(el("h2", {}, "Which clip sounds mask-distorted?"));
    const buttons: HTMLButtonElement[] = [];
    const refresh = () => buttons.forEach((b) => (b.disabled = !this.session.canSubmit()));
    const grid = el("div", { class: "pairgrid" });
    grid.append(el("span", {}, "First"), this.audio(pair.first_url, pair.pair_id + ":first", refresh));
    grid.append(el("span", {}, "Second"), this.audio(pair.second_url, pair.pair_id + ":second", refresh));
    card.append(grid);
    const row = el("div", { class: "choices" });
    for (const answer of PAIR_ANSWERS) {
      const b = el("button", { class: "answer" }, answer);
      b.disabled = true;
      b.addEventListener("click", () => void this.answerPair(answer));
      buttons.push(b);
      row.append(b);
    }
    card.append(row, el("p", { class: "hint" }, "Play both clips before answering."));
    this.root.append(card);
  }
}

const rootEl = typeof document !== "undefined" ? document.getElementById("app") : null;
if (rootEl) {
  void new App(rootEl).start();
}
