/** Rendering of server-provided diff spans.
 *
 * The server sends word-level spans that losslessly reconstruct both texts;
 * this module only decides how to paint them. Changed words are wrapped
 * whole (del on the original side, ins on the candidate side) so a
 * highlighted word always reads as one element, with a character-level
 * refinement inside replace spans to emphasize what actually changed.
 */

import type { DiffSpan } from "./api.js";

export function reconstruct(spans: DiffSpan[]): { a: string; b: string } {
  let a = "";
  let b = "";
  for (const span of spans) {
    a += span.a;
    b += span.b;
  }
  return { a, b };
}

/* char-level refinement */

const CHAR_DP_CAP = 90000;

type Run = { op: "equal" | "delete" | "insert"; text: string };

function lcsRuns(a: string, b: string): Run[] {
  const n = a.length;
  const m = b.length;
  // (n+1) x (m+1) LCS length table, row-major in a flat array.
  const width = m + 1;
  const dp = new Uint16Array((n + 1) * width);
  for (let i = 1; i <= n; i++) {
    for (let j = 1; j <= m; j++) {
      dp[i * width + j] =
        a[i - 1] === b[j - 1]
          ? dp[(i - 1) * width + (j - 1)]! + 1
          : Math.max(dp[(i - 1) * width + j]!, dp[i * width + (j - 1)]!);
    }
  }
  const reversed: Run[] = [];
  let i = n;
  let j = m;
  const push = (op: Run["op"], ch: string) => {
    const last = reversed[reversed.length - 1];
    if (last && last.op === op) {
      last.text = ch + last.text;
    } else {
      reversed.push({ op, text: ch });
    }
  };
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && a[i - 1] === b[j - 1]) {
      push("equal", a[i - 1]!);
      i--;
      j--;
    } else if (j > 0 && (i === 0 || dp[i * width + (j - 1)]! >= dp[(i - 1) * width + j]!)) {
      push("insert", b[j - 1]!);
      j--;
    } else {
      push("delete", a[i - 1]!);
      i--;
    }
  }
  return reversed.reverse();
}

/** Character-level spans between two short texts, difflib-shaped: adjacent
 * delete/insert runs merge into a replace. Falls back to one replace span
 * when the inputs are too large for the quadratic table. */
export function charSpans(a: string, b: string): DiffSpan[] {
  if (a === b) {
    return a ? [{ op: "equal", a, b }] : [];
  }
  if (a.length * b.length > CHAR_DP_CAP) {
    return [{ op: "replace", a, b }];
  }
  const runs = lcsRuns(a, b);
  const spans: DiffSpan[] = [];
  for (let i = 0; i < runs.length; i++) {
    const run = runs[i]!;
    if (run.op === "equal") {
      spans.push({ op: "equal", a: run.text, b: run.text });
      continue;
    }
    const next = runs[i + 1];
    if (next && next.op !== "equal" && next.op !== run.op) {
      const del = run.op === "delete" ? run.text : next.text;
      const ins = run.op === "insert" ? run.text : next.text;
      spans.push({ op: "replace", a: del, b: ins });
      i++;
    } else if (run.op === "delete") {
      spans.push({ op: "delete", a: run.text, b: "" });
    } else {
      spans.push({ op: "insert", a: "", b: run.text });
    }
  }
  return spans;
}

/* DOM painting */

function emphasizeInto(
  doc: Document,
  parent: HTMLElement,
  refined: DiffSpan[],
  side: "a" | "b",
): void {
  for (const span of refined) {
    const text = side === "a" ? span.a : span.b;
    if (!text) {
      continue;
    }
    if (span.op === "equal") {
      parent.appendChild(doc.createTextNode(text));
    } else {
      const em = doc.createElement("em");
      em.className = "chg";
      em.textContent = text;
      parent.appendChild(em);
    }
  }
}

/** Paint one side of the diff into a container.
 *
 * The concatenated text content of the container equals the corresponding
 * source text exactly; wrapping never drops or reorders characters. On the
 * "a" side, delete and replace spans become whole del.diff-del elements; on
 * the "b" side, insert and replace spans become whole ins.diff-ins elements.
 */
export function renderSideInto(
  container: HTMLElement,
  spans: DiffSpan[],
  side: "a" | "b",
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  for (const span of spans) {
    const text = side === "a" ? span.a : span.b;
    if (span.op === "equal") {
      if (text) {
        container.appendChild(doc.createTextNode(text));
      }
      continue;
    }
    if (side === "a") {
      if (span.op === "insert" || !text) {
        continue;
      }
      const del = doc.createElement("del");
      del.className = "diff-del";
      if (span.op === "replace") {
        emphasizeInto(doc, del, charSpans(span.a, span.b), "a");
      } else {
        del.textContent = text;
      }
      container.appendChild(del);
    } else {
      if (span.op === "delete" || !text) {
        continue;
      }
      const ins = doc.createElement("ins");
      ins.className = "diff-ins";
      if (span.op === "replace") {
        emphasizeInto(doc, ins, charSpans(span.a, span.b), "b");
      } else {
        ins.textContent = text;
      }
      container.appendChild(ins);
    }
  }
}
