"""Helpers for running the registry service as a separate process."""

import os
import re
import signal
import subprocess
import sys
from contextlib import contextmanager


@contextmanager
def registry_process(log_path, ttp_public: bytes):
    cmd = [sys.executable, "-m", "pufkex", "registry", "serve", "--port", "0",
           "--log-path", str(log_path), "--ttp-public", ttp_public.hex()]
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        m = re.search(r":(\d+)\s*$", line)
        if m is None:
            raise RuntimeError(f"registry did not start: {line!r}")
        yield proc, int(m.group(1))
    finally:
        if proc.poll() is None:
            proc.kill()
        proc.wait()
        proc.stdout.close()


def kill_hard(proc) -> None:
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait()
