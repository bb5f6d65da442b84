#!/usr/bin/env python3
"""
Test runner script for the sampling plan toolkit

    python run_tests.py                 # whole suite
    python run_tests.py --fast          # skip the Monte Carlo acceptance runs
    python run_tests.py tests/test_oc.py -k dependent

Runs pytest through uvx with the toolkit's dependencies.
"""

import os
import subprocess
import sys
from pathlib import Path

DEPENDENCIES = ["numpy", "scipy", "pandas", "click"]


def pytest_command(args):
    """uvx invocation of pytest with every dependency on the path"""
    cmd = ["uvx"]
    for dependency in DEPENDENCIES:
        cmd += ["--with", dependency]
    return cmd + ["pytest"] + args


def split_args(argv):
    """Translate --fast into a marker filter; pytest's testpaths covers the rest"""
    args = [a for a in argv if a != "--fast"]
    if len(args) != len(argv):
        args += ["-m", "not slow"]
    if not any(a.startswith("-v") for a in args):
        args.append("-v")
    return args


def main():
    os.chdir(Path(__file__).parent)
    cmd = pytest_command(split_args(sys.argv[1:]))
    print("Two-stage sampling plans - test run")
    print(f"Running: {' '.join(cmd)}")
    result = subprocess.run(cmd)
    if result.returncode:
        print(f"\nTests failed with exit code {result.returncode}")
    return result.returncode


if __name__ == "__main__":
    sys.exit(main())
