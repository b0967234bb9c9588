#!/usr/bin/env python3
import importlib.util
import logging
import os
import sys

if __name__ == "__main__":
    mainlog = logging.getLogger("mixedboot.py")

    self_name: str = "mixedboot"
    self_spec = importlib.util.find_spec(self_name)
    if self_spec is None:
        mainlog.debug("Package mixedboot is not installed, trying locally\n")
        parent_folder: str = os.path.dirname(os.path.dirname(os.path.realpath(__file__)))
        expected_folder: str = f"{parent_folder}{os.path.sep}"
        if os.path.isdir(expected_folder):
            sys.path.append(expected_folder)

    from mixedboot.lib.cli import main

    sys.exit(main(sys.argv[1:]))
