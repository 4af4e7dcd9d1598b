/** Page bootstrap: resolve the base URL, wire the flow to the view. */

import { StudyApi } from "./api.js";
import { StudyView } from "./render.js";
import { SessionFlow } from "./session.js";

function resolveBaseUrl(): string {
  const fromGlobal = (globalThis as { STUDY_BASE_URL?: unknown }).STUDY_BASE_URL;
  if (typeof fromGlobal === "string") {
    return fromGlobal;
  }
  const meta = document.querySelector('meta[name="study-base-url"]');
  return meta?.getAttribute("content") ?? "";
}

export function boot(root: HTMLElement): SessionFlow {
  const api = new StudyApi(resolveBaseUrl());
  const flow = new SessionFlow(api, window.sessionStorage);
  const view = new StudyView(root, {
    onStart: (gender) => void flow.start(gender),
    onSelect: (choice) => flow.select(choice),
    onPlayback: () => flow.notePlayback(),
    onSubmit: () => void flow.submit(),
    onRecover: () => void flow.resume(),
    mediaUrl: (clipUrl) => api.mediaUrl(clipUrl),
  });
  flow.subscribe((state) => view.render(state));
  void flow.resume();
  return flow;
}

const mount = document.getElementById("app");
if (mount) {
  boot(mount);
}
