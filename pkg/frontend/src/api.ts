/** Typed client for the annotation service HTTP API.
 *
 * The client is a verbatim mapping of the server's request/response models;
 * it never derives or recomputes a value the server already reports. Task
 * ids contain "#", so every id is URL-encoded before it enters a path.
 */

export type DiffOp = "equal" | "replace" | "delete" | "insert";

export interface DiffSpan {
  op: DiffOp;
  a: string;
  b: string;
}

export interface TaskView {
  id: string;
  original_id: string;
  state: string;
  trial: boolean;
  dq: number;
  generator: string;
  question_original: string;
  question_candidate: string;
  starter_code_original: string;
  starter_code_candidate: string;
  diff: DiffSpan[];
  verdict_count: number;
}

export interface NextTaskOut {
  task: TaskView | null;
  remaining_for_annotator: number;
}

export interface VerdictIn {
  annotator: string;
  category: "bad" | "robust" | "ctf";
  solvable: boolean;
  is_ctf: boolean;
  difficulty_changed: boolean;
  notes: string;
}

export interface TaskStateOut {
  id: string;
  state: string;
  verdict_count: number;
  needs_adjudication: boolean;
  resolution_outcome: string | null;
}

export interface SolutionIn {
  language_tag: string;
  body: string;
  dry_run: boolean;
}

export interface SmokeOut {
  status: string;
  stdout: string;
  stderr: string;
  exit_code: number | null;
  input: string;
}

export interface SolutionOut {
  task_id: string;
  attached: boolean;
  state: string;
  ds: number | null;
  ds_provider: string;
  warning: string | null;
  smoke: SmokeOut | null;
}

export interface CaseView {
  input: string;
  output: string;
  testtype: string;
}

export interface ProblemView {
  id: string;
  question_content: string;
  starter_code: string;
  public_test_cases: CaseView[];
  metadata: Record<string, unknown>;
  solution: { language_tag: string; body: string } | null;
}

export interface PairView {
  original: string;
  ctf_problem: ProblemView;
  dq: number;
  ds: number;
  objective: number;
}

export interface PairsOut {
  pairs: PairView[];
}

export interface ProgressOut {
  total: number;
  by_state: Record<string, number>;
  trial_tasks: number;
  needs_adjudication: number;
  resolved_total: number;
  first_pass_agreement: number | null;
  pairs_ready: number;
}

/** Failure detail attached to a rejected solution submission. */
export interface SmokeFailureDetail {
  message: string;
  smoke: { status: string; stdout: string; stderr: string; exit_code: number | null };
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : `request failed with status ${status}`);
    this.name = "ApiError";
  }

  /** The structured payload of a failed smoke run, when that is what failed. */
  smokeFailure(): SmokeFailureDetail | null {
    const d = this.detail as SmokeFailureDetail | null;
    if (d && typeof d === "object" && typeof d.message === "string" && d.smoke) {
      return d;
    }
    return null;
  }
}

export interface ApiClientOptions {
  baseUrl: string;
  token?: string;
  fetchFn?: typeof fetch;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly token: string;
  private readonly fetchFn: typeof fetch;

  constructor(options: ApiClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.token = options.token ?? "";
    this.fetchFn = options.fetchFn ?? fetch;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { accept: "application/json" };
    if (this.token) {
      headers["authorization"] = `Bearer ${this.token}`;
    }
    if (body !== undefined) {
      headers["content-type"] = "application/json";
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let payload: unknown = null;
    const text = await response.text();
    if (text) {
      try {
        payload = JSON.parse(text);
      } catch {
        payload = text;
      }
    }
    if (!response.ok) {
      const detail =
        payload && typeof payload === "object" && "detail" in payload
          ? (payload as { detail: unknown }).detail
          : payload;
      throw new ApiError(response.status, detail);
    }
    return payload as T;
  }

  nextTask(annotator: string): Promise<NextTaskOut> {
    return this.request<NextTaskOut>(
      "GET",
      `/api/tasks/next?annotator=${encodeURIComponent(annotator)}`,
    );
  }

  submitVerdict(taskId: string, verdict: VerdictIn): Promise<TaskStateOut> {
    return this.request<TaskStateOut>(
      "POST",
      `/api/tasks/${encodeURIComponent(taskId)}/verdict`,
      verdict,
    );
  }

  submitSolution(taskId: string, solution: SolutionIn): Promise<SolutionOut> {
    return this.request<SolutionOut>(
      "POST",
      `/api/tasks/${encodeURIComponent(taskId)}/solution`,
      solution,
    );
  }

  pairs(): Promise<PairsOut> {
    return this.request<PairsOut>("GET", "/api/pairs");
  }

  progress(): Promise<ProgressOut> {
    return this.request<ProgressOut>("GET", "/api/progress");
  }
}
