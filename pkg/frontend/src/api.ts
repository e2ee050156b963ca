/** Typed client for the session server's HTTP API.
 *
 * All four endpoints are safe to retry: session creation and response
 * submission are idempotent on the server (identical resubmissions are
 * acknowledged as duplicates), and the two GETs are read-only. Network
 * failures therefore retry with a short backoff before surfacing.
 */

export type Condition = "additive" | "multiplicative";

export interface PassiveDescriptor {
  session: string;
  phase: "passive";
  wealth: number;
  trial: number;
  position: number;
  stimulus: number;
  window_ms: number;
  remaining: number;
}

export interface ActiveDescriptor {
  session: string;
  phase: "active";
  wealth: number;
  trial: number;
  left: number[];
  right: number[];
  kind: string;
  window_ms: number;
  jitter_ms: number;
  remaining: number;
}

export interface DoneDescriptor {
  session: string;
  phase: "done";
  wealth: number;
  trial: null;
  remaining: 0;
}

export type TrialDescriptor = PassiveDescriptor | ActiveDescriptor | DoneDescriptor;

export interface ResponseBody {
  trial: number;
  choice: "press" | "timeout" | "left" | "right";
  rt_ms?: number;
}

export interface Ack {
  session: string;
  phase: "passive" | "active";
  trial: number;
  accepted: boolean;
  duplicate?: boolean;
  requeued?: boolean;
  message?: string | null;
  wealth?: number;
  next_phase: string;
}

export interface SessionInfo {
  session: string;
  created: boolean;
  subject: string;
  condition: Condition;
  phase: string;
  passive_total: number;
  active_total: number;
  endowment: number;
}

export interface Summary {
  session: string;
  subject: string;
  condition: Condition;
  phase: string;
  wealth: number;
  endowment: number;
  passive_applied: number;
  passive_total: number;
  active_recorded: number;
  active_total: number;
  passive_wealth: number[];
  payout: {
    amount: number;
    chosen_trials: number[];
    wealth_before_clamp: number;
  } | null;
}

export interface Api {
  createSession(condition: Condition, seed: number, subject?: string): Promise<SessionInfo>;
  nextTrial(): Promise<TrialDescriptor>;
  postResponse(body: ResponseBody): Promise<Ack>;
  summary(): Promise<Summary>;
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

const RETRIES = 3;
const BACKOFF_MS = 250;

async function request<T>(
  url: string,
  init: RequestInit,
  sleep: (ms: number) => Promise<void>,
): Promise<T> {
  let lastError: unknown = null;
  for (let attempt = 0; attempt < RETRIES; attempt += 1) {
    try {
      const res = await fetch(url, init);
      if (!res.ok) {
        const detail = await res.text();
        throw new ApiError(`${init.method ?? "GET"} ${url}: ${res.status} ${detail}`, res.status);
      }
      return (await res.json()) as T;
    } catch (err) {
      if (err instanceof ApiError) {
        throw err; // the server answered; retrying would not change it
      }
      lastError = err;
      await sleep(BACKOFF_MS * (attempt + 1));
    }
  }
  throw lastError instanceof Error ? lastError : new Error(String(lastError));
}

export function makeApi(
  baseUrl: string,
  sessionId: string,
  sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
): Api {
  const root = baseUrl.replace(/\/+$/, "");
  const base = `${root}/api/session/${encodeURIComponent(sessionId)}`;
  const json = { "Content-Type": "application/json" };
  return {
    createSession: (condition, seed, subject) =>
      request<SessionInfo>(
        base,
        {
          method: "POST",
          headers: json,
          body: JSON.stringify({ condition, seed, subject: subject ?? null }),
        },
        sleep,
      ),
    nextTrial: () => request<TrialDescriptor>(`${base}/next-trial`, {}, sleep),
    postResponse: (body) =>
      request<Ack>(
        `${base}/response`,
        { method: "POST", headers: json, body: JSON.stringify(body) },
        sleep,
      ),
    summary: () => request<Summary>(`${base}/summary`, {}, sleep),
  };
}
