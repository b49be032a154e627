# Test runner executed inside the sandbox working directory.
# usage: cura_runner.py SOLUTION_FILE TEST_FILE
import ast
import io
import re
import sys
import traceback
import types
import unittest

TALLY = "CURA-TALLY"


def tally(run, failures, errors):
    sys.stderr.write(f"{TALLY} run={run} failures={failures} errors={errors}\n")
    sys.stderr.flush()


def main():
    if len(sys.argv) != 3:
        sys.stderr.write("CURA-HARNESS-ERROR: usage: cura_runner.py SOLUTION TEST\n")
        return 2
    solution_path, test_path = sys.argv[1], sys.argv[2]
    module = types.ModuleType("test_solution")
    module.__file__ = test_path
    sys.modules["test_solution"] = module

    try:
        with open(solution_path, encoding="utf-8") as f:
            solution_src = f.read()
        with open(test_path, encoding="utf-8") as f:
            test_src = f.read()
    except OSError as exc:
        sys.stderr.write(f"CURA-HARNESS-ERROR: {exc}\n")
        return 2

    # solution and tests share one namespace, as in BigCodeBench
    exec(compile(solution_src, solution_path, "exec"), module.__dict__)
    test_tree = compile(test_src, test_path, "exec", ast.PyCF_ONLY_AST)
    has_asserts = any(isinstance(node, ast.Assert) for node in ast.walk(test_tree))
    try:
        exec(compile(test_tree, test_path, "exec"), module.__dict__)
    except AssertionError:
        traceback.print_exc()
        tally(1, 1, 0)
        return 1

    suite = unittest.defaultTestLoader.loadTestsFromModule(module)
    if suite.countTestCases() == 0:
        if has_asserts:
            tally(1, 0, 0)
            return 0
        sys.stderr.write("NoTestsCollected: test code defines no tests or assertions\n")
        tally(0, 0, 0)
        return 3

    stream = io.StringIO()
    result = unittest.TextTestRunner(stream=stream, verbosity=1).run(suite)
    report = re.sub(r"^Ran (\d+) (tests?) in [0-9.]+s$", r"Ran \1 \2", stream.getvalue(), flags=re.M)
    sys.stderr.write(report)
    tally(result.testsRun, len(result.failures), len(result.errors))
    return 0 if result.wasSuccessful() else 1


if __name__ == "__main__":
    sys.exit(main())
