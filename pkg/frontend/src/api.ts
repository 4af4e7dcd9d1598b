/** Typed client for the listening-study HTTP API.
 *
 * All methods translate the service's snake_case wire format into the
 * camelCase types the rest of the client uses. Configuration is a single
 * base URL; an empty base means same-origin requests.
 */

export type Gender = "female" | "male" | "other";
export type Choice = "a" | "b";

export interface SessionInfo {
  participantId: string;
  nItems: number;
  expiresInS: number;
}

export interface Progress {
  done: number;
  total: number;
}

/** One assignment exactly as the server exposes it: no provenance fields. */
export interface ClientStudyItem {
  itemId: string;
  clipUrl: string;
  optionA: string;
  optionB: string;
  progress: Progress;
}

export type NextResult = { done: true } | { done: false; item: ClientStudyItem };

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

/** The server no longer recognizes the session (unknown or expired). */
export class SessionExpired extends ApiError {
  constructor(message: string) {
    super(401, message);
    this.name = "SessionExpired";
  }
}

/** The server already holds a judgment for this item in this session. */
export class AlreadyJudged extends ApiError {
  constructor(message: string) {
    super(409, message);
    this.name = "AlreadyJudged";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(response: Response): Promise<string> {
  try {
    const body: unknown = await response.json();
    if (body && typeof body === "object" && "detail" in body) {
      return String((body as { detail: unknown }).detail);
    }
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `request failed with status ${response.status}`;
}

export class StudyApi {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  /** Clip URLs arrive host-relative; resolve them against the base. */
  mediaUrl(clipUrl: string): string {
    return this.base + clipUrl;
  }

  async createSession(gender: Gender): Promise<SessionInfo> {
    const body = await this.request("POST", "/sessions", { gender });
    return {
      participantId: String(body["participant_id"]),
      nItems: Number(body["n_items"]),
      expiresInS: Number(body["expires_in_s"]),
    };
  }

  async next(participantId: string): Promise<NextResult> {
    const body = await this.request(
      "GET",
      `/sessions/${encodeURIComponent(participantId)}/next`,
    );
    if (body["done"]) {
      return { done: true };
    }
    const raw = body["item"] as Record<string, unknown>;
    return {
      done: false,
      item: {
        itemId: String(raw["item_id"]),
        clipUrl: String(raw["clip_url"]),
        optionA: String(raw["option_a"]),
        optionB: String(raw["option_b"]),
        progress: raw["progress"] as Progress,
      },
    };
  }

  async submit(participantId: string, itemId: string, chosen: Choice): Promise<void> {
    await this.request(
      "POST",
      `/sessions/${encodeURIComponent(participantId)}/judgments`,
      { item_id: itemId, chosen },
    );
  }

  private async request(
    method: string,
    path: string,
    payload?: unknown,
  ): Promise<Record<string, unknown>> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.base + path, {
        method,
        headers: payload === undefined ? undefined : { "Content-Type": "application/json" },
        body: payload === undefined ? undefined : JSON.stringify(payload),
      });
    } catch {
      throw new ApiError(0, "network unreachable");
    }
    if (response.status === 401) {
      throw new SessionExpired(await errorDetail(response));
    }
    if (response.status === 409) {
      throw new AlreadyJudged(await errorDetail(response));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as Record<string, unknown>;
  }
}
