"""In-sandbox test runner.

Usage: python3 harness.py <job_file>

Reads a job {"code", "entry_point", "tests", "limits": {"per_test_timeout_ms"}}
and writes one JSON line per test to stdout:
{"test_index", "status", "actual", "stderr_excerpt", "elapsed_ms"}.

Exit codes: 0 protocol completed, 1 job unreadable, 2 internal harness fault.
"""

import io
import json
import math
import os
import signal
import sys
import time
import traceback

STDERR_CAP = 4096


class _Timeout(BaseException):
    pass


def _on_alarm(signum, frame):
    raise _Timeout()


def _canonical(value):
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    return value


def compare_values(actual, expected, comparison):
    """Exact: structural equality with tuples read as lists.
    Float: elementwise |a - e| <= abs_tol through containers."""
    kind = (comparison or {}).get("kind", "exact")
    try:
        if kind == "float":
            return _close(_canonical(actual), _canonical(expected),
                          float(comparison.get("abs_tol", 1e-6)))
        return _canonical(actual) == _canonical(expected)
    except Exception:
        return False


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _close(a, e, tol):
    if isinstance(a, list) and isinstance(e, list):
        return len(a) == len(e) and all(_close(x, y, tol) for x, y in zip(a, e))
    if isinstance(a, dict) and isinstance(e, dict):
        return a.keys() == e.keys() and all(_close(a[k], e[k], tol) for k in a)
    if _is_num(a) and _is_num(e):
        if math.isnan(a) or math.isnan(e):
            return False
        return abs(a - e) <= tol
    return a == e


def _jsonable(value):
    try:
        return json.loads(json.dumps(_canonical(value)))
    except Exception:
        return repr(value)


def main(argv):
    if len(argv) != 2:
        sys.stderr.write("usage: harness.py <job_file>\n")
        return 1
    try:
        with open(argv[1], "r", encoding="utf-8") as f:
            job = json.load(f)
        code = job["code"]
        entry_point = job["entry_point"]
        tests = job["tests"]
        per_test_ms = int(job["limits"]["per_test_timeout_ms"])
    except Exception as exc:
        sys.stderr.write("cannot read job: %s\n" % exc)
        return 1

    # Keep the protocol stream private; candidate prints go to a buffer.
    protocol = os.fdopen(os.dup(1), "w", buffering=1)
    devnull = os.open(os.devnull, os.O_WRONLY)
    os.dup2(devnull, 1)
    sys.stdout = io.StringIO()

    def emit(record):
        protocol.write(json.dumps(record) + "\n")
        protocol.flush()

    namespace = {"__name__": "candidate"}
    try:
        exec(compile(code, "<candidate>", "exec"), namespace)
        func = namespace[entry_point]
    except BaseException:
        emit({"test_index": -1, "status": "runtime_error", "actual": None,
              "stderr_excerpt": traceback.format_exc()[-STDERR_CAP:], "elapsed_ms": 0})
        return 0

    signal.signal(signal.SIGALRM, _on_alarm)
    for index, test in enumerate(tests):
        sys.stdout = io.StringIO()
        status, actual, err = "runtime_error", None, ""
        start = time.monotonic()
        try:
            signal.setitimer(signal.ITIMER_REAL, per_test_ms / 1000.0)
            try:
                result = func(*test["input_args"])
            finally:
                signal.setitimer(signal.ITIMER_REAL, 0)
            actual = _jsonable(result)
            ok = compare_values(result, test["expected_output"], test.get("comparison"))
            status = "pass" if ok else "wrong_answer"
        except _Timeout:
            status, err = "timeout", "exceeded %d ms" % per_test_ms
        except RecursionError:
            status, err = "runtime_error", "RecursionError: maximum recursion depth exceeded"
        except BaseException:
            status, err = "runtime_error", traceback.format_exc()[-STDERR_CAP:]
        emit({"test_index": index, "status": status, "actual": actual,
              "stderr_excerpt": err[:STDERR_CAP],
              "elapsed_ms": int((time.monotonic() - start) * 1000)})
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main(sys.argv))
    except SystemExit:
        raise
    except BaseException:
        sys.stderr.write(traceback.format_exc())
        sys.exit(2)
