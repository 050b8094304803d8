import type {
  MessageResult,
  ProfilePayload,
  SessionCreated,
  SessionSnapshot,
  ToolStats,
  TrackCard,
} from "./types.js";

/** Error carrying the service's structured {error_kind, message} body. */
export class ApiError extends Error {
  constructor(
    readonly kind: string,
    message: string,
    readonly status: number
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ApiError("unreachable", `cannot reach the service: ${String(err)}`, 0);
  }
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    const kind =
      body && typeof body.error_kind === "string" ? body.error_kind : "http_error";
    const message =
      body && typeof body.message === "string"
        ? body.message
        : `request failed with status ${response.status}`;
    throw new ApiError(kind, message, response.status);
  }
  return body as T;
}

function post(payload: unknown): RequestInit {
  return {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(payload),
  };
}

export class ApiClient {
  private readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  createSession(profile: ProfilePayload, finalK?: number): Promise<SessionCreated> {
    const payload: Record<string, unknown> = { profile };
    if (finalK !== undefined) payload.final_k = finalK;
    return request<SessionCreated>(`${this.baseUrl}/sessions`, post(payload));
  }

  sendMessage(sessionId: string, query: string): Promise<MessageResult> {
    return request<MessageResult>(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/messages`,
      post({ query })
    );
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return request<SessionSnapshot>(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}`
    );
  }

  getTrack(trackId: string): Promise<TrackCard> {
    return request<TrackCard>(`${this.baseUrl}/tracks/${encodeURIComponent(trackId)}`);
  }

  getToolStats(): Promise<ToolStats> {
    return request<ToolStats>(`${this.baseUrl}/stats/tools`);
  }
}
