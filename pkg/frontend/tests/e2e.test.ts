/** End-to-end annotation flow against the real service.
 *
 * Boots the annotation server on the toy campaign, then drives two app
 * instances (two "tabs", two annotator identities) through the full flow:
 * fetch a task, see the edit highlighted, agree on two ctf verdicts, attach
 * a passing solution, and watch the pair show up under /api/pairs. The
 * whole script must finish inside sixty seconds.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { createApp, type App } from "../src/app.js";

const REPO_ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "../..");
const CONFIG = "tests/fixtures/toy/config.json";
const SOLUTION = readFileSync(
  path.join(REPO_ROOT, "tests/fixtures/toy/solutions/abc-swap__alpha__0.py"),
  "utf8",
);

let startedAt = 0;
let outDir = "";
let server: ChildProcess | null = null;
let serverLog = "";
let baseUrl = "";

async function freePort(): Promise<number> {
  return await new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const { port } = probe.address() as net.AddressInfo;
      probe.close(() => resolve(port));
    });
  });
}

function runStage(stage: string): void {
  const result = spawnSync("ctfkit", [stage, "--config", CONFIG, "--out", outDir], {
    cwd: REPO_ROOT,
    encoding: "utf8",
    timeout: 30_000,
  });
  if (result.status !== 0) {
    throw new Error(`${stage} failed: ${result.stderr}\n${result.stdout}`);
  }
}

async function until(what: string, cond: () => boolean | Promise<boolean>, ms = 20_000) {
  const deadline = Date.now() + ms;
  while (true) {
    if (await cond()) {
      return;
    }
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}\nserver log:\n${serverLog}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
}

beforeAll(async () => {
  startedAt = Date.now();
  outDir = mkdtempSync(path.join(os.tmpdir(), "annot-e2e-"));
  runStage("perturb");
  runStage("filter");
  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawn(
    "ctfkit",
    ["annotate-serve", "--config", CONFIG, "--out", outDir, "--port", String(port)],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stdout?.on("data", (chunk: Buffer) => (serverLog += chunk.toString()));
  server.stderr?.on("data", (chunk: Buffer) => (serverLog += chunk.toString()));
  await until("server to come up", async () => {
    try {
      const response = await fetch(`${baseUrl}/api/progress`);
      return response.ok;
    } catch {
      return false;
    }
  });
});

afterAll(() => {
  server?.kill();
  if (outDir) {
    rmSync(outDir, { recursive: true, force: true });
  }
});

function openTab(annotator: string): { root: HTMLElement; app: App } {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const app = createApp(root, {
    baseUrl,
    fetchFn: globalThis.fetch.bind(globalThis),
  });
  return { root, app };
}

function query<T extends HTMLElement>(root: HTMLElement, name: string): T {
  const node = root.querySelector<T>(`[data-test="${name}"]`);
  if (!node) {
    throw new Error(`missing ${name}`);
  }
  return node;
}

function text(root: HTMLElement, name: string): string {
  return query(root, name).textContent ?? "";
}

function submitCtfVerdict(root: HTMLElement): void {
  query<HTMLInputElement>(root, "cat-ctf").checked = true;
  query<HTMLInputElement>(root, "solvable").checked = true;
  query<HTMLFormElement>(root, "verdict-form").dispatchEvent(
    new Event("submit", { bubbles: true, cancelable: true }),
  );
}

describe("annotation flow", () => {
  it("two annotators agree on a ctf task, attach a solution, and the pair lands", async () => {
    const a = openTab("reviewer-a");
    const b = openTab("reviewer-b");

    // Tab A fetches the first task and sees the edit highlighted.
    await a.app.start("reviewer-a", "");
    expect(query(a.root, "task").hidden).toBe(false);
    const taskId = text(a.root, "task-id");
    expect(taskId).toBe("abc-swap#cand-alpha-0");
    expect(text(a.root, "dq-badge")).toBe("dq 0.0422");
    const highlighted = Array.from(
      query(a.root, "pane-candidate").querySelectorAll("ins.diff-ins"),
    )
      .map((node) => node.textContent)
      .join(" ");
    expect(highlighted).toContain("adjacent");
    expect(query(a.root, "pane-original").textContent).not.toContain("adjacent");

    // First agreeing ctf verdict; A moves on to a different task.
    submitCtfVerdict(a.root);
    await until("tab A to advance", () => text(a.root, "task-id") !== taskId);
    expect(query(a.root, "solution").hidden).toBe(true);

    // Tab B gets the same task (it still needs a second verdict).
    await b.app.start("reviewer-b", "");
    expect(text(b.root, "task-id")).toBe(taskId);

    // Second agreeing verdict resolves the task as ctf; the solution panel
    // opens in tab B.
    submitCtfVerdict(b.root);
    await until("solution panel", () => !query(b.root, "solution").hidden);
    expect(text(b.root, "solution-task")).toBe(taskId);

    // Dry run first: the smoke result must come back clean before the
    // attach button unlocks.
    const body = query<HTMLTextAreaElement>(b.root, "solution-body");
    body.value = SOLUTION;
    expect(query<HTMLButtonElement>(b.root, "attach-btn").disabled).toBe(true);
    query<HTMLButtonElement>(b.root, "dry-run-btn").click();
    await until("dry run result", () => !query(b.root, "smoke-result").hidden);
    expect(text(b.root, "smoke-status")).toBe("ok");
    expect(text(b.root, "smoke-stdout")).toBe("YES\n");
    expect(query<HTMLButtonElement>(b.root, "attach-btn").disabled).toBe(false);

    // Attach for real.
    query<HTMLButtonElement>(b.root, "attach-btn").click();
    await until("attach confirmation", () => !query(b.root, "attached-note").hidden);
    expect(text(b.root, "attached-note")).toContain("solution attached");

    // The finished pair is now served under /api/pairs.
    const response = await fetch(`${baseUrl}/api/pairs`);
    expect(response.ok).toBe(true);
    const pairs = (await response.json()) as {
      pairs: Array<{ original: string; ctf_problem: { id: string } }>;
    };
    const ids = pairs.pairs.map((pair) => pair.ctf_problem.id);
    expect(ids).toContain("abc-swap#ctf0");
    expect(pairs.pairs.find((p) => p.ctf_problem.id === "abc-swap#ctf0")?.original).toBe(
      "abc-swap",
    );

    expect(Date.now() - startedAt).toBeLessThan(60_000);
  }, 80_000);
});
