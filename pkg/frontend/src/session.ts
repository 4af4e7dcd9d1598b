/** Session flow: one state machine per tab, every transition server-driven.
 *
 * The controller owns no study data beyond the current item; reloading the
 * page and calling resume() lands on the first unjudged item because the
 * server replays its assignment state. Judgments already recorded survive
 * session expiry by the same logic.
 */

import {
  AlreadyJudged,
  ApiError,
  SessionExpired,
  type Choice,
  type ClientStudyItem,
  type Gender,
  type NextResult,
  type SessionInfo,
} from "./api.js";

/** The slice of StudyApi the flow needs; tests substitute fakes. */
export interface StudyClient {
  createSession(gender: Gender): Promise<SessionInfo>;
  next(participantId: string): Promise<NextResult>;
  submit(participantId: string, itemId: string, chosen: Choice): Promise<void>;
}

/** Minimal Storage interface so tests can inject an in-memory store. */
export interface KeyStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export type Phase =
  | "intake"
  | "loading"
  | "item"
  | "done"
  | "expired"
  | "fault";

export interface FlowState {
  phase: Phase;
  item: ClientStudyItem | null;
  selected: Choice | null;
  playbackStarted: boolean;
  submitting: boolean;
  notice: string | null;
}

export type Listener = (state: FlowState) => void;

const STORAGE_KEY = "study-participant";

const EXPIRED_NOTICE =
  "The session has expired. Start again to continue; every answer already sent is kept.";

export class SessionFlow {
  private readonly api: StudyClient;
  private readonly store: KeyStore;
  private readonly listeners: Listener[] = [];
  private state: FlowState = {
    phase: "intake",
    item: null,
    selected: null,
    playbackStarted: false,
    submitting: false,
    notice: null,
  };

  constructor(api: StudyClient, store: KeyStore) {
    this.api = api;
    this.store = store;
  }

  getState(): FlowState {
    return this.state;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.state);
  }

  /** Entry point on page load: pick up a stored session or ask for intake. */
  async resume(): Promise<void> {
    const participantId = this.store.getItem(STORAGE_KEY);
    if (!participantId) {
      this.patch({ phase: "intake" });
      return;
    }
    await this.loadNext(participantId);
  }

  async start(gender: Gender): Promise<void> {
    if (!["intake", "expired", "fault"].includes(this.state.phase)) {
      return;
    }
    this.patch({ phase: "loading", notice: null });
    let session: SessionInfo;
    try {
      session = await this.api.createSession(gender);
    } catch (error) {
      this.patch({ phase: "intake", notice: describe(error) });
      return;
    }
    this.store.setItem(STORAGE_KEY, session.participantId);
    await this.loadNext(session.participantId);
  }

  select(choice: Choice): void {
    if (this.state.phase !== "item" || this.state.submitting) {
      return;
    }
    this.patch({ selected: choice });
  }

  notePlayback(): void {
    if (this.state.phase !== "item" || this.state.playbackStarted) {
      return;
    }
    this.patch({ playbackStarted: true });
  }

  canSubmit(): boolean {
    return (
      this.state.phase === "item" &&
      this.state.selected !== null &&
      this.state.playbackStarted &&
      !this.state.submitting
    );
  }

  /** Submit the current choice; rapid repeat calls collapse to one request. */
  async submit(): Promise<void> {
    if (!this.canSubmit()) {
      return;
    }
    const participantId = this.store.getItem(STORAGE_KEY);
    const { item, selected } = this.state;
    if (!participantId || !item || !selected) {
      return;
    }
    this.patch({ submitting: true, notice: null });
    try {
      await this.api.submit(participantId, item.itemId, selected);
    } catch (error) {
      if (error instanceof SessionExpired) {
        this.expire();
        return;
      }
      if (!(error instanceof AlreadyJudged)) {
        // selection is kept so the participant can simply try again
        this.patch({ submitting: false, notice: describe(error) });
        return;
      }
      // 409 means the server already holds this judgment; just advance
    }
    await this.loadNext(participantId);
  }

  private async loadNext(participantId: string): Promise<void> {
    this.patch({ phase: "loading", submitting: false });
    let result: NextResult;
    try {
      result = await this.api.next(participantId);
    } catch (error) {
      if (error instanceof SessionExpired) {
        this.expire();
      } else {
        this.patch({ phase: "fault", notice: describe(error) });
      }
      return;
    }
    if (result.done) {
      this.patch({ phase: "done", item: null, selected: null });
      return;
    }
    this.patch({
      phase: "item",
      item: result.item,
      selected: null,
      playbackStarted: false,
      submitting: false,
      notice: null,
    });
  }

  private expire(): void {
    this.store.removeItem(STORAGE_KEY);
    this.patch({
      phase: "expired",
      item: null,
      selected: null,
      submitting: false,
      notice: EXPIRED_NOTICE,
    });
  }

  private patch(changes: Partial<FlowState>): void {
    this.state = { ...this.state, ...changes };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError && error.status === 0) {
    return "The server could not be reached. Check the connection and try again.";
  }
  if (error instanceof Error && error.message) {
    return error.message;
  }
  return "Something went wrong. Try again.";
}
