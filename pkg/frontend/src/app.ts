/** Single-page annotation client.
 *
 * The page holds no authoritative state: every screen is painted from the
 * latest server response, and refreshing at any point reproduces the
 * server's view. All displayed metrics (dq, ds, diff spans, smoke output)
 * come from the API verbatim.
 */

import { ApiClient, ApiError } from "./api.js";
import type { SolutionOut, TaskStateOut, TaskView } from "./api.js";
import { reconstruct, renderSideInto } from "./diff.js";

export interface AppOptions {
  baseUrl?: string;
  fetchFn?: typeof fetch;
}

type Elements = ReturnType<typeof buildSkeleton>;

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

function buildSkeleton(container: HTMLElement) {
  const doc = container.ownerDocument;
  container.innerHTML = `
    <div class="app">
      <header class="bar">
        <h1>annotation queue</h1>
        <form data-test="identity-form" class="identity">
          <input data-test="annotator-input" name="annotator" placeholder="annotator id" autocomplete="username">
          <input data-test="token-input" name="token" type="password" placeholder="token (optional)">
          <button data-test="start-btn" type="submit">start</button>
        </form>
        <div data-test="auth-error" class="error" hidden></div>
      </header>
      <main>
        <section data-test="idle" hidden>
          <p>no tasks right now. come back later or check the board below.</p>
        </section>
        <section data-test="task" hidden>
          <div class="task-meta">
            <code data-test="task-id"></code>
            <span data-test="dq-badge" class="badge"></span>
            <span data-test="task-state" class="badge"></span>
            <span data-test="task-generator" class="badge"></span>
            <span data-test="remaining" class="badge"></span>
          </div>
          <div class="panes">
            <div class="pane">
              <h3>original</h3>
              <div data-test="pane-original" class="question"></div>
            </div>
            <div class="pane">
              <h3>candidate</h3>
              <div data-test="pane-candidate" class="question"></div>
            </div>
          </div>
          <details data-test="starter-code" hidden>
            <summary>starter code</summary>
            <div class="panes">
              <pre data-test="starter-original"></pre>
              <pre data-test="starter-candidate"></pre>
            </div>
          </details>
          <form data-test="verdict-form" class="verdict">
            <label><input type="radio" name="category" value="bad" data-test="cat-bad"> bad</label>
            <label><input type="radio" name="category" value="robust" data-test="cat-robust"> robust</label>
            <label><input type="radio" name="category" value="ctf" data-test="cat-ctf"> ctf</label>
            <label><input type="checkbox" data-test="solvable"> solvable</label>
            <label><input type="checkbox" data-test="difficulty-changed"> difficulty changed</label>
            <input data-test="notes" placeholder="notes">
            <button data-test="verdict-submit" type="submit">submit verdict</button>
            <div data-test="verdict-error" class="error" hidden></div>
          </form>
        </section>
        <section data-test="solution" hidden>
          <h3>attach a solution for <code data-test="solution-task"></code></h3>
          <textarea data-test="solution-body" rows="12" spellcheck="false"></textarea>
          <div class="solution-actions">
            <button data-test="dry-run-btn" type="button">dry run</button>
            <button data-test="attach-btn" type="button" disabled>attach</button>
          </div>
          <div data-test="smoke-result" class="smoke" hidden>
            <span data-test="smoke-status" class="badge"></span>
            <span data-test="smoke-input" class="badge"></span>
            <pre data-test="smoke-stdout"></pre>
            <pre data-test="smoke-stderr" class="stderr"></pre>
          </div>
          <div data-test="solution-error" class="error" hidden></div>
          <div data-test="attached-note" class="ok" hidden></div>
        </section>
        <section data-test="board">
          <button data-test="refresh-board" type="button">pairs + progress</button>
          <div data-test="progress"></div>
          <ul data-test="pairs-list"></ul>
        </section>
      </main>
    </div>`;
  const q = <T extends HTMLElement>(sel: string): T => {
    const node = container.querySelector<T>(`[data-test="${sel}"]`);
    if (!node) {
      throw new Error(`missing element ${sel}`);
    }
    return node;
  };
  return {
    doc,
    identityForm: q<HTMLFormElement>("identity-form"),
    annotatorInput: q<HTMLInputElement>("annotator-input"),
    tokenInput: q<HTMLInputElement>("token-input"),
    authError: q<HTMLElement>("auth-error"),
    idle: q<HTMLElement>("idle"),
    task: q<HTMLElement>("task"),
    taskId: q<HTMLElement>("task-id"),
    dqBadge: q<HTMLElement>("dq-badge"),
    taskState: q<HTMLElement>("task-state"),
    taskGenerator: q<HTMLElement>("task-generator"),
    remaining: q<HTMLElement>("remaining"),
    paneOriginal: q<HTMLElement>("pane-original"),
    paneCandidate: q<HTMLElement>("pane-candidate"),
    starterDetails: q<HTMLElement>("starter-code"),
    starterOriginal: q<HTMLElement>("starter-original"),
    starterCandidate: q<HTMLElement>("starter-candidate"),
    verdictForm: q<HTMLFormElement>("verdict-form"),
    solvable: q<HTMLInputElement>("solvable"),
    difficultyChanged: q<HTMLInputElement>("difficulty-changed"),
    notes: q<HTMLInputElement>("notes"),
    verdictError: q<HTMLElement>("verdict-error"),
    solution: q<HTMLElement>("solution"),
    solutionTask: q<HTMLElement>("solution-task"),
    solutionBody: q<HTMLTextAreaElement>("solution-body"),
    dryRunBtn: q<HTMLButtonElement>("dry-run-btn"),
    attachBtn: q<HTMLButtonElement>("attach-btn"),
    smokeResult: q<HTMLElement>("smoke-result"),
    smokeStatus: q<HTMLElement>("smoke-status"),
    smokeInput: q<HTMLElement>("smoke-input"),
    smokeStdout: q<HTMLElement>("smoke-stdout"),
    smokeStderr: q<HTMLElement>("smoke-stderr"),
    solutionError: q<HTMLElement>("solution-error"),
    attachedNote: q<HTMLElement>("attached-note"),
    refreshBoard: q<HTMLButtonElement>("refresh-board"),
    progress: q<HTMLElement>("progress"),
    pairsList: q<HTMLElement>("pairs-list"),
  };
}

export class App {
  private readonly ui: Elements;
  private readonly baseUrl: string;
  private readonly fetchFn: typeof fetch | undefined;
  private client: ApiClient | null = null;
  private annotator = "";
  private currentTask: TaskView | null = null;
  private solutionTaskId: string | null = null;

  constructor(container: HTMLElement, options: AppOptions = {}) {
    this.ui = buildSkeleton(container);
    this.baseUrl = options.baseUrl ?? "";
    this.fetchFn = options.fetchFn;
    this.wire();
  }

  private wire(): void {
    this.ui.identityForm.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.start(this.ui.annotatorInput.value.trim(), this.ui.tokenInput.value.trim());
    });
    this.ui.verdictForm.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitVerdict();
    });
    this.ui.dryRunBtn.addEventListener("click", () => void this.runSolution(true));
    this.ui.attachBtn.addEventListener("click", () => void this.runSolution(false));
    // Editing the solution invalidates the previewed smoke run.
    this.ui.solutionBody.addEventListener("input", () => {
      this.ui.attachBtn.disabled = true;
    });
    this.ui.refreshBoard.addEventListener("click", () => void this.refreshBoard());
  }

  async start(annotator: string, token: string): Promise<void> {
    if (!annotator) {
      this.showAuthError("enter an annotator id to start");
      return;
    }
    this.annotator = annotator;
    this.client = new ApiClient({
      baseUrl: this.baseUrl,
      token: token || undefined,
      ...(this.fetchFn ? { fetchFn: this.fetchFn } : {}),
    });
    this.ui.authError.hidden = true;
    await this.refresh();
  }

  /** Re-fetch the annotator's view; safe to call at any point. */
  async refresh(): Promise<void> {
    this.hideSolutionPanel();
    await this.fetchNext();
  }

  private async fetchNext(): Promise<void> {
    if (!this.client) {
      return;
    }
    try {
      const out = await this.client.nextTask(this.annotator);
      this.renderTask(out.task, out.remaining_for_annotator);
    } catch (error) {
      this.routeError(error, this.ui.verdictError);
    }
  }

  private renderTask(task: TaskView | null, remaining: number): void {
    this.currentTask = task;
    if (!task) {
      this.ui.task.hidden = true;
      this.ui.idle.hidden = false;
      return;
    }
    this.ui.idle.hidden = true;
    this.ui.task.hidden = false;
    this.ui.taskId.textContent = task.id;
    this.ui.dqBadge.textContent = `dq ${task.dq.toFixed(4)}`;
    this.ui.taskState.textContent = `${task.state}${task.trial ? " (trial)" : ""}`;
    this.ui.taskGenerator.textContent = task.generator;
    this.ui.remaining.textContent = `${remaining} in your queue`;

    // Server spans are authoritative; paint them only if they reconstruct
    // both texts exactly, otherwise fall back to plain text.
    const { a, b } = reconstruct(task.diff);
    if (a === task.question_original && b === task.question_candidate) {
      renderSideInto(this.ui.paneOriginal, task.diff, "a");
      renderSideInto(this.ui.paneCandidate, task.diff, "b");
    } else {
      this.ui.paneOriginal.textContent = task.question_original;
      this.ui.paneCandidate.textContent = task.question_candidate;
    }

    const hasStarter = Boolean(task.starter_code_original || task.starter_code_candidate);
    this.ui.starterDetails.hidden = !hasStarter;
    this.ui.starterOriginal.textContent = task.starter_code_original;
    this.ui.starterCandidate.textContent = task.starter_code_candidate;

    this.ui.verdictForm.reset();
    this.ui.verdictError.hidden = true;
  }

  private async submitVerdict(): Promise<void> {
    if (!this.client || !this.currentTask) {
      return;
    }
    const picked = this.ui.verdictForm.querySelector<HTMLInputElement>(
      "input[name=category]:checked",
    );
    if (!picked) {
      this.showError(this.ui.verdictError, "pick a category first");
      return;
    }
    const category = picked.value as "bad" | "robust" | "ctf";
    const solvable = this.ui.solvable.checked;
    if (category === "ctf" && !solvable) {
      this.showError(
        this.ui.verdictError,
        "a ctf verdict requires the candidate to be solvable; tick solvable or pick another category",
      );
      return;
    }
    let out: TaskStateOut;
    try {
      out = await this.client.submitVerdict(this.currentTask.id, {
        annotator: this.annotator,
        category,
        solvable,
        is_ctf: category === "ctf",
        difficulty_changed: this.ui.difficultyChanged.checked,
        notes: this.ui.notes.value,
      });
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.showError(this.ui.verdictError, "task changed on the server; refreshing");
        await this.refresh();
        return;
      }
      this.routeError(error, this.ui.verdictError);
      return;
    }
    if (out.resolution_outcome === "ctf") {
      this.openSolutionPanel(out.id);
      this.ui.task.hidden = true;
      return;
    }
    await this.refresh();
  }

  private openSolutionPanel(taskId: string): void {
    this.solutionTaskId = taskId;
    this.ui.solution.hidden = false;
    this.ui.solutionTask.textContent = taskId;
    this.ui.solutionBody.value = "";
    this.ui.dryRunBtn.disabled = false;
    this.ui.attachBtn.disabled = true;
    this.ui.smokeResult.hidden = true;
    this.ui.solutionError.hidden = true;
    this.ui.attachedNote.hidden = true;
  }

  private hideSolutionPanel(): void {
    this.solutionTaskId = null;
    this.ui.solution.hidden = true;
  }

  private async runSolution(dryRun: boolean): Promise<void> {
    if (!this.client || !this.solutionTaskId) {
      return;
    }
    const body = this.ui.solutionBody.value;
    if (!body.trim()) {
      this.showError(this.ui.solutionError, "paste a solution first");
      return;
    }
    let out: SolutionOut;
    try {
      out = await this.client.submitSolution(this.solutionTaskId, {
        language_tag: "python",
        body,
        dry_run: dryRun,
      });
    } catch (error) {
      if (error instanceof ApiError) {
        const failure = error.smokeFailure();
        if (failure) {
          this.renderSmoke(
            failure.smoke.status,
            "",
            failure.smoke.stdout,
            failure.smoke.stderr,
          );
          this.showError(this.ui.solutionError, failure.message);
          this.ui.attachBtn.disabled = true;
          return;
        }
      }
      this.routeError(error, this.ui.solutionError);
      return;
    }
    this.ui.solutionError.hidden = true;
    if (out.smoke) {
      this.renderSmoke(out.smoke.status, out.smoke.input, out.smoke.stdout, out.smoke.stderr);
    }
    if (dryRun) {
      this.ui.attachBtn.disabled = out.smoke?.status !== "ok";
      return;
    }
    if (out.attached) {
      const ds = out.ds === null ? "" : ` ds ${out.ds.toFixed(4)} (${out.ds_provider})`;
      const warning = out.warning ? ` warning: ${out.warning}` : "";
      this.ui.attachedNote.textContent = `solution attached, task ${out.state}.${ds}${warning}`;
      this.ui.attachedNote.hidden = false;
      this.ui.dryRunBtn.disabled = true;
      this.ui.attachBtn.disabled = true;
      // Keep the confirmation visible while the next task loads.
      await this.fetchNext();
    }
  }

  private renderSmoke(status: string, input: string, stdout: string, stderr: string): void {
    this.ui.smokeResult.hidden = false;
    this.ui.smokeStatus.textContent = status === "timeout" ? "timeout (wall clock)" : status;
    this.ui.smokeStatus.className = `badge smoke-${status}`;
    this.ui.smokeInput.textContent = input ? `input ${JSON.stringify(input)}` : "";
    this.ui.smokeStdout.textContent = stdout;
    this.ui.smokeStderr.textContent = stderr;
  }

  private async refreshBoard(): Promise<void> {
    if (!this.client) {
      return;
    }
    try {
      const [progress, pairs] = await Promise.all([
        this.client.progress(),
        this.client.pairs(),
      ]);
      const agreement =
        progress.first_pass_agreement === null
          ? "n/a"
          : progress.first_pass_agreement.toFixed(2);
      this.ui.progress.textContent =
        `${progress.total} tasks, ${progress.resolved_total} resolved, ` +
        `${progress.pairs_ready} pairs ready, agreement ${agreement}`;
      this.ui.pairsList.textContent = "";
      for (const pair of pairs.pairs) {
        const item = el(this.ui.doc, "li", { "data-test": "pair-item" });
        item.textContent =
          `${pair.original} -> ${pair.ctf_problem.id} ` +
          `(dq ${pair.dq.toFixed(4)}, ds ${pair.ds.toFixed(4)})`;
        this.ui.pairsList.appendChild(item);
      }
    } catch (error) {
      this.routeError(error, this.ui.authError);
    }
  }

  private routeError(error: unknown, box: HTMLElement): void {
    if (error instanceof ApiError && error.status === 401) {
      // Token rejected: back to the identity prompt.
      this.ui.task.hidden = true;
      this.ui.idle.hidden = true;
      this.hideSolutionPanel();
      this.showAuthError("the server rejected your token; sign in again");
      return;
    }
    const message =
      error instanceof ApiError
        ? typeof error.detail === "string"
          ? error.detail
          : JSON.stringify(error.detail)
        : String(error);
    this.showError(box, message);
  }

  private showAuthError(message: string): void {
    this.ui.authError.textContent = message;
    this.ui.authError.hidden = false;
  }

  private showError(box: HTMLElement, message: string): void {
    box.textContent = message;
    box.hidden = false;
  }
}

export function createApp(container: HTMLElement, options: AppOptions = {}): App {
  return new App(container, options);
}
