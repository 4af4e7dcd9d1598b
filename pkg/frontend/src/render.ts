/** DOM view for the study. Renders from FlowState only; every mutation of
 * study data goes through the handler callbacks, never the other way.
 *
 * The item view is rebuilt only when the item changes. State-only updates
 * (selection, playback, submitting) patch the existing nodes so the audio
 * element, and with it the playback position, survives re-renders.
 */

import type { Choice, Gender } from "./api.js";
import type { FlowState } from "./session.js";

export interface ViewHandlers {
  onStart(gender: Gender): void;
  onSelect(choice: Choice): void;
  onPlayback(): void;
  onSubmit(): void;
  onRecover(): void;
  mediaUrl(clipUrl: string): string;
}

const GENDERS: readonly Gender[] = ["female", "male", "other"];

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export class StudyView {
  private readonly root: HTMLElement;
  private readonly handlers: ViewHandlers;
  private readonly doc: Document;
  private state: FlowState | null = null;
  private renderedItemId: string | null = null;
  private pickedGender: Gender | null = null;

  constructor(root: HTMLElement, handlers: ViewHandlers) {
    this.root = root;
    this.handlers = handlers;
    this.doc = root.ownerDocument;
    this.doc.addEventListener("keydown", (event) => this.onKey(event));
  }

  render(state: FlowState): void {
    this.state = state;
    switch (state.phase) {
      case "intake":
      case "expired":
        this.renderedItemId = null;
        this.buildIntake(state);
        break;
      case "loading":
        this.renderedItemId = null;
        this.buildMessage("Loading the next clip...");
        break;
      case "item":
        if (state.item && state.item.itemId === this.renderedItemId) {
          this.updateItem(state);
        } else if (state.item) {
          this.renderedItemId = state.item.itemId;
          this.buildItem(state);
        }
        break;
      case "done":
        this.renderedItemId = null;
        this.buildDone();
        break;
      case "fault":
        this.renderedItemId = null;
        this.buildFault(state);
        break;
    }
  }

  private buildIntake(state: FlowState): void {
    this.root.replaceChildren();
    this.pickedGender = null;
    const panel = el(this.doc, "div", "panel intake");
    panel.append(el(this.doc, "h1", undefined, "Voice description study"));
    panel.append(
      el(
        this.doc,
        "p",
        "blurb",
        "You will hear short clips. For each one, pick whichever of two " +
          "descriptions fits the voice better. There is no right answer.",
      ),
    );
    if (state.notice) {
      panel.append(el(this.doc, "p", "notice", state.notice));
    }
    panel.append(el(this.doc, "p", undefined, "How do you describe yourself?"));
    const row = el(this.doc, "div", "gender-row");
    const startButton = el(this.doc, "button", "start", "Start");
    startButton.disabled = true;
    for (const gender of GENDERS) {
      const button = el(
        this.doc,
        "button",
        "gender",
        gender[0]!.toUpperCase() + gender.slice(1),
      );
      button.dataset["gender"] = gender;
      button.addEventListener("click", () => {
        this.pickedGender = gender;
        for (const sibling of Array.from(row.children)) {
          sibling.classList.toggle("picked", sibling === button);
        }
        startButton.disabled = false;
      });
      row.append(button);
    }
    panel.append(row);
    startButton.addEventListener("click", () => {
      if (this.pickedGender) {
        this.handlers.onStart(this.pickedGender);
      }
    });
    panel.append(startButton);
    this.root.append(panel);
  }

  private buildItem(state: FlowState): void {
    const item = state.item!;
    this.root.replaceChildren();
    const panel = el(this.doc, "div", "panel item");

    const progress = el(
      this.doc,
      "p",
      "progress",
      `Clip ${item.progress.done + 1} of ${item.progress.total}`,
    );
    panel.append(progress);

    const audio = el(this.doc, "audio", "player");
    audio.controls = true;
    audio.preload = "auto";
    audio.src = this.handlers.mediaUrl(item.clipUrl);
    audio.addEventListener("play", () => this.handlers.onPlayback());
    panel.append(audio);

    const trouble = el(this.doc, "div", "media-trouble");
    trouble.hidden = true;
    trouble.append(
      el(this.doc, "span", undefined, "The clip did not load."),
    );
    const retry = el(this.doc, "button", "retry", "Try loading it again");
    retry.addEventListener("click", () => {
      trouble.hidden = true;
      audio.src = this.handlers.mediaUrl(item.clipUrl);
      if (typeof audio.load === "function") {
        audio.load();
      }
    });
    trouble.append(retry);
    audio.addEventListener("error", () => {
      trouble.hidden = false;
    });
    panel.append(trouble);

    panel.append(
      el(
        this.doc,
        "p",
        "prompt",
        "Listen first, then pick the description that fits the voice better.",
      ),
    );

    const cards = el(this.doc, "div", "cards");
    for (const [choice, text] of [
      ["a", item.optionA],
      ["b", item.optionB],
    ] as const) {
      const card = el(this.doc, "button", "card");
      card.dataset["choice"] = choice;
      card.setAttribute("aria-pressed", "false");
      card.append(el(this.doc, "span", "card-name", `Option ${choice.toUpperCase()}`));
      card.append(el(this.doc, "span", "card-text", text));
      card.addEventListener("click", () => this.handlers.onSelect(choice));
      cards.append(card);
    }
    panel.append(cards);

    const notice = el(this.doc, "p", "notice");
    notice.hidden = true;
    panel.append(notice);

    const submit = el(this.doc, "button", "submit", "Submit choice");
    submit.disabled = true;
    submit.addEventListener("click", () => this.handlers.onSubmit());
    panel.append(submit);

    panel.append(
      el(this.doc, "p", "hint", "Keyboard: A and B pick an option, Enter submits."),
    );

    this.root.append(panel);
    this.updateItem(state);
  }

  private updateItem(state: FlowState): void {
    for (const card of Array.from(this.root.querySelectorAll<HTMLElement>(".card"))) {
      const active = card.dataset["choice"] === state.selected;
      card.classList.toggle("picked", active);
      card.setAttribute("aria-pressed", String(active));
    }
    const submit = this.root.querySelector<HTMLButtonElement>(".submit");
    if (submit) {
      submit.disabled = !(
        state.selected !== null &&
        state.playbackStarted &&
        !state.submitting
      );
      submit.textContent = state.submitting ? "Sending..." : "Submit choice";
    }
    const notice = this.root.querySelector<HTMLElement>(".notice");
    if (notice) {
      notice.hidden = !state.notice;
      notice.textContent = state.notice ?? "";
    }
  }

  private buildDone(): void {
    this.root.replaceChildren();
    const panel = el(this.doc, "div", "panel done");
    panel.append(el(this.doc, "h1", undefined, "That was the last clip"));
    panel.append(
      el(this.doc, "p", undefined, "Every answer has been recorded. Thank you!"),
    );
    this.root.append(panel);
  }

  private buildMessage(text: string): void {
    this.root.replaceChildren();
    this.root.append(el(this.doc, "div", "panel wait", text));
  }

  private buildFault(state: FlowState): void {
    this.root.replaceChildren();
    const panel = el(this.doc, "div", "panel fault");
    panel.append(el(this.doc, "p", "notice", state.notice ?? "Something went wrong."));
    const again = el(this.doc, "button", "recover", "Try again");
    again.addEventListener("click", () => this.handlers.onRecover());
    panel.append(again);
    this.root.append(panel);
  }

  private onKey(event: KeyboardEvent): void {
    if (!this.state || this.state.phase !== "item") {
      return;
    }
    const key = event.key.toLowerCase();
    if (key === "a" || key === "b") {
      this.handlers.onSelect(key);
    } else if (key === "enter") {
      this.handlers.onSubmit();
    }
  }
}
