"""Sandboxed solution execution and test-suite reconstruction.

Solutions run as separate OS processes inside a scratch directory with
resource limits applied (wall clock, address space, output size) and, where
the host permits it, an isolated network namespace. This is process-level
containment for trusted-ish generated code, not a hardened jail.

Suite reconstruction inherits the original inputs byte-for-byte and recomputes
every expected output by running the counterfactual solution on them; each
input is run twice and byte-different stdout aborts the reconstruction, so
nondeterministic solutions cannot poison a benchmark.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import resource
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .domain import FUNCTIONAL, Problem, SourceCode, TestCase, TestSuite

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_TIMEOUT = "timeout"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_OUTPUT_OVERFLOW = "output_overflow"


class TestkitError(RuntimeError):
    pass


class ReconstructionError(TestkitError):
    """A counterfactual solution failed on inherited inputs."""

    def __init__(self, message: str, failures: list[dict[str, Any]]):
        super().__init__(message)
        self.failures = failures


class NondeterminismError(TestkitError):
    """Two runs on the same input produced byte-different stdout."""

    def __init__(self, message: str, input_text: str):
        super().__init__(message)
        self.input_text = input_text


class DiffExecutionError(TestkitError):
    """behavior_diff requires both programs to run cleanly on every input."""

    def __init__(self, message: str, failures: list[dict[str, Any]]):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class RunLimits:
    wall_time_s: float = 10.0
    memory_bytes: int = 512 * 1024 * 1024
    output_cap_bytes: int = 1024 * 1024

    def __post_init__(self) -> None:
        if self.wall_time_s <= 0:
            raise ValueError("wall_time_s must be positive")
        if self.memory_bytes <= 0 or self.output_cap_bytes <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class ExecutionResult:
    status: str
    stdout: str
    stderr: str
    exit_code: int | None
    duration_s: float

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class RunnerSpec:
    """How to execute one language: argv template plus source-file suffix.

    Template placeholders: {python} (this interpreter), {source} (path of the
    written solution file).
    """

    argv: tuple[str, ...]
    suffix: str


def default_registry() -> dict[str, RunnerSpec]:
    python_spec = RunnerSpec(argv=("{python}", "{source}"), suffix=".py")
    return {"python": python_spec, "python3": python_spec}


def build_registry(raw: Mapping[str, Any] | None) -> dict[str, RunnerSpec]:
    """Registry from config data: {"lang": {"argv": [...], "suffix": ".py"}}."""
    registry = default_registry()
    for tag, spec in (raw or {}).items():
        argv = tuple(str(a) for a in spec.get("argv", ()))
        if not argv:
            raise ValueError(f"runner {tag!r}: argv template must be non-empty")
        registry[tag] = RunnerSpec(argv=argv, suffix=str(spec.get("suffix", ".py")))
    return registry


@functools.lru_cache(maxsize=1)
def _netns_prefix() -> tuple[str, ...]:
    """Prefix commands with an unshared network namespace when the host allows it."""
    try:
        probe = subprocess.run(
            ["unshare", "-n", "true"], capture_output=True, timeout=5.0
        )
        if probe.returncode == 0:
            return ("unshare", "-n")
    except (OSError, subprocess.TimeoutExpired):
        pass
    return ()


def _child_limits(limits: RunLimits):
    fsize = limits.output_cap_bytes * 2 + 65536

    def apply() -> None:
        resource.setrlimit(resource.RLIMIT_AS, (limits.memory_bytes, limits.memory_bytes))
        resource.setrlimit(resource.RLIMIT_FSIZE, (fsize, fsize))
        cpu = max(1, int(limits.wall_time_s) + 2)
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))

    return apply


def _read_capped(path: str, cap: int) -> tuple[str, bool]:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        data = fh.read(cap)
    return data.decode("utf-8", errors="replace"), size > cap


def run_solution(
    solution: SourceCode,
    stdin_text: str,
    limits: RunLimits | None = None,
    registry: Mapping[str, RunnerSpec] | None = None,
) -> ExecutionResult:
    """Run one program on one input under resource limits.

    stdout/stderr are spooled to files in the scratch directory (the file
    size rlimit backs the output cap), then truncated to the cap on read.
    """
    limits = limits or RunLimits()
    registry = registry if registry is not None else default_registry()
    spec = registry.get(solution.language_tag)
    if spec is None:
        raise TestkitError(f"no runner registered for language {solution.language_tag!r}")

    with tempfile.TemporaryDirectory(prefix="ctfkit-run-") as scratch:
        source_path = os.path.join(scratch, "solution" + spec.suffix)
        with open(source_path, "w", encoding="utf-8") as fh:
            fh.write(solution.body)
        argv = list(_netns_prefix()) + [
            part.format(python=sys.executable, source=source_path) for part in spec.argv
        ]
        stdout_path = os.path.join(scratch, "stdout")
        stderr_path = os.path.join(scratch, "stderr")
        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": scratch,
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONHASHSEED": "0",
            "PYTHONUTF8": "1",
        }
        start = time.perf_counter()
        timed_out = False
        with open(stdout_path, "wb") as out_fh, open(stderr_path, "wb") as err_fh:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=out_fh,
                stderr=err_fh,
                cwd=scratch,
                env=env,
                preexec_fn=_child_limits(limits),
                start_new_session=True,
            )
            try:
                proc.communicate(stdin_text.encode("utf-8"), timeout=limits.wall_time_s)
                exit_code: int | None = proc.returncode
            except subprocess.TimeoutExpired:
                timed_out = True
                exit_code = None
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    proc.kill()
                proc.wait()
            except BrokenPipeError:
                # Program exited before consuming stdin; not an error by itself.
                proc.wait()
                exit_code = proc.returncode
        duration = time.perf_counter() - start
        stdout, out_over = _read_capped(stdout_path, limits.output_cap_bytes)
        stderr, _ = _read_capped(stderr_path, limits.output_cap_bytes)

        if out_over:
            status = STATUS_OUTPUT_OVERFLOW
        elif timed_out:
            status = STATUS_TIMEOUT
        elif exit_code != 0:
            status = STATUS_RUNTIME_ERROR
        else:
            status = STATUS_OK
        return ExecutionResult(
            status=status, stdout=stdout, stderr=stderr, exit_code=exit_code, duration_s=duration
        )


# === functional-mode harness ===

_HARNESS = """

if __name__ == "__main__":
    import json as _json
    import sys as _sys
    _args = _json.loads(_sys.stdin.read() or "[]")
    _result = {entry}(*_args)
    print(_json.dumps(_result, ensure_ascii=False))
"""


def build_functional_harness(solution: SourceCode, entry_point: str) -> SourceCode:
    """Wrap a function-style solution so it reads JSON args from stdin and
    prints the JSON-encoded return value."""
    if not entry_point.isidentifier():
        raise TestkitError(f"invalid entry point {entry_point!r}")
    return SourceCode(
        language_tag=solution.language_tag,
        body=solution.body + _HARNESS.format(entry=entry_point),
    )


def _executable_form(
    solution: SourceCode, suite_mode: str, entry_point: str | None
) -> SourceCode:
    if suite_mode == FUNCTIONAL:
        if not entry_point:
            raise TestkitError("functional suites require an entry_point")
        return build_functional_harness(solution, entry_point)
    return solution


# === output normalization and judging ===

def normalize_output(text: str) -> str:
    """Strip trailing whitespace per line and trailing newlines overall."""
    return "\n".join(line.rstrip() for line in text.splitlines()).rstrip("\n")


@dataclass(frozen=True)
class JudgeResult:
    per_case: tuple[bool, ...]
    passed: bool
    statuses: tuple[str, ...] = field(default=())


def judge(
    program: SourceCode,
    suite: TestSuite,
    limits: RunLimits | None = None,
    registry: Mapping[str, RunnerSpec] | None = None,
    entry_point: str | None = None,
) -> JudgeResult:
    """Run a program against a suite. A case passes iff the run succeeds and
    normalized stdout equals the normalized expected output; timeouts and
    runtime errors simply fail the case."""
    runnable = _executable_form(program, suite.mode, entry_point)
    per_case: list[bool] = []
    statuses: list[str] = []
    for case in suite.cases:
        result = run_solution(runnable, case.input, limits, registry)
        statuses.append(result.status)
        per_case.append(result.ok and normalize_output(result.stdout) == normalize_output(case.output))
    return JudgeResult(per_case=tuple(per_case), passed=all(per_case), statuses=tuple(statuses))


def complete_testcases(
    original: Problem,
    ctf_solution: SourceCode,
    limits: RunLimits | None = None,
    registry: Mapping[str, RunnerSpec] | None = None,
    entry_point: str | None = None,
) -> TestSuite:
    """Rebuild a test suite for a counterfactual solution.

    Inputs are inherited from the original suite byte-for-byte and in order;
    each expected output is recomputed by running ``ctf_solution`` on the
    inherited input. Every input is executed twice and must produce
    byte-identical stdout, otherwise NondeterminismError aborts the
    reconstruction. Any non-ok run raises ReconstructionError carrying a
    per-input failure report.
    """
    runnable = _executable_form(ctf_solution, original.tests.mode, entry_point)
    failures: list[dict[str, Any]] = []
    outputs: list[str] = []
    for case in original.tests.cases:
        first = run_solution(runnable, case.input, limits, registry)
        if not first.ok:
            failures.append(
                {"input": case.input, "status": first.status, "stderr": first.stderr}
            )
            continue
        second = run_solution(runnable, case.input, limits, registry)
        if not second.ok:
            failures.append(
                {"input": case.input, "status": second.status, "stderr": second.stderr}
            )
            continue
        if first.stdout != second.stdout:
            raise NondeterminismError(
                f"solution is nondeterministic on input {case.input!r}", case.input
            )
        outputs.append(first.stdout)
    if failures:
        raise ReconstructionError(
            f"solution failed on {len(failures)} of {len(original.tests.cases)} inherited inputs",
            failures,
        )
    cases = tuple(
        TestCase(input=case.input, output=out, testtype=case.testtype)
        for case, out in zip(original.tests.cases, outputs)
    )
    return TestSuite(cases=cases, mode=original.tests.mode)


def behavior_diff(
    a: SourceCode,
    b: SourceCode,
    inputs: Sequence[str],
    limits: RunLimits | None = None,
    registry: Mapping[str, RunnerSpec] | None = None,
) -> list[str]:
    """Inputs on which two programs disagree (normalized stdout).

    Both programs must execute cleanly on every input; otherwise
    DiffExecutionError carries a per-input report of what failed.
    """
    failures: list[dict[str, Any]] = []
    diverging: list[str] = []
    for input_text in inputs:
        ra = run_solution(a, input_text, limits, registry)
        rb = run_solution(b, input_text, limits, registry)
        if not ra.ok or not rb.ok:
            failures.append(
                {
                    "input": input_text,
                    "a_status": ra.status,
                    "b_status": rb.status,
                    "a_stderr": ra.stderr if not ra.ok else "",
                    "b_stderr": rb.stderr if not rb.ok else "",
                }
            )
            continue
        if normalize_output(ra.stdout) != normalize_output(rb.stdout):
            diverging.append(input_text)
    if failures:
        raise DiffExecutionError(
            f"{len(failures)} of {len(inputs)} inputs failed to execute cleanly", failures
        )
    return diverging
