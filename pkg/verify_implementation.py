#!/usr/bin/env python3
"""
QRobust Verification Script
Checks that the package compiles, the shipped configuration is valid, the
documents are present and the simulator agrees with its dense-operator oracles.
"""

import glob
import os
import py_compile
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "app"))


def check_python_files():
    """Verify all Python files compile without errors"""
    print("CHECKING: Python files...")
    files = glob.glob("app/*.py") + glob.glob("*.py")
    errors = 0
    for file_path in files:
        try:
            py_compile.compile(file_path, doraise=True)
        except py_compile.PyCompileError as e:
            print(f"ERROR: {file_path}: {e}")
            errors += 1
    print(f"SUCCESS: Compiled {len(files) - errors}/{len(files)} Python files")
    return errors == 0


def check_configuration():
    """Resolve the default run for every task against the shipped YAML files"""
    print("\nCHECKING: Configuration...")
    from qr_config import DEFAULT_CONFIG_DIR, TASKS, ConfigurationManager
    from qr_errors import QRobustError

    manager = ConfigurationManager(DEFAULT_CONFIG_DIR, write_defaults=False)
    ok = True
    for task in TASKS:
        try:
            run = manager.resolve(None, task=task)
            print(f"SUCCESS: {task} ({run.profile}, {run.model.num_qubits} qubits)")
        except QRobustError as e:
            print(f"ERROR: {task}: {e.message}")
            ok = False
    return ok


def check_documentation():
    """Verify the user-facing documents exist"""
    print("\nCHECKING: Documentation...")
    root = os.path.dirname(os.path.abspath(__file__))
    ok = True
    for name in ("README.md", "DESIGN.md", os.path.join("docs", "README.md"), os.path.join("app", "README.md")):
        if os.path.isfile(os.path.join(root, name)):
            print(f"SUCCESS: {name}")
        else:
            print(f"ERROR: {name} missing")
            ok = False
    return ok


def check_oracles():
    """Compare the fast simulator paths against dense references"""
    print("\nCHECKING: Simulator oracles...")
    from qr_testing import run_self_checks

    report = run_self_checks()
    for result in report["results"]:
        status = "SUCCESS" if result["passed"] else "ERROR"
        detail = f"max error {result['max_error']:.2e}" if result["max_error"] is not None else result["error"]
        print(f"{status}: {result['name']} ({detail})")
    summary = report["oracle_checks"]
    return summary["failed"] == 0


def main():
    """Run all verification checks"""
    print("QRobust - Implementation Verification")
    print("=" * 50)

    results = []
    for check in (check_python_files, check_configuration, check_documentation, check_oracles):
        try:
            results.append(check())
        except Exception as e:
            print(f"ERROR: Check failed with exception: {e}")
            results.append(False)

    passed = sum(results)
    print(f"\nVERIFICATION RESULTS: {passed}/{len(results)} checks passed")
    return passed == len(results)


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
