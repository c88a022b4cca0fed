#!/usr/bin/env python3
"""Check that a chat worker executable speaks the scopeloop chat protocol.

Usage: chat_conformance.py [--timeout S] -- <worker> [args...]

Exits 0 when every check passes, 1 otherwise.
"""

import argparse
import base64
import json
import os
import queue
import subprocess
import sys
import threading

MAX_LINE = 1 << 20


class Worker:
    def __init__(self, argv):
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0)
        self.lines = queue.Queue()
        threading.Thread(target=self._read, daemon=True).start()

    def _read(self):
        for raw in self.proc.stdout:
            self.lines.put(raw)
        self.lines.put(None)

    def send(self, msg):
        self.proc.stdin.write((json.dumps(msg) + "\n").encode())
        self.proc.stdin.flush()

    def recv(self, timeout):
        raw = self.lines.get(timeout=timeout)
        if raw is None:
            raise EOFError("worker closed stdout")
        if len(raw) > MAX_LINE:
            raise ValueError(f"line of {len(raw)} bytes exceeds the 1 MiB cap")
        msg = json.loads(raw)
        if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
            raise ValueError(f"message without a type: {raw[:80]!r}")
        return msg

    def reply(self, timeout):
        text = []
        while True:
            msg = self.recv(timeout)
            if msg["type"] == "token":
                if not isinstance(msg.get("text"), str):
                    raise ValueError("token without text")
                text.append(msg["text"])
            elif msg["type"] == "done":
                return "".join(text)
            elif msg["type"] == "error":
                raise ValueError(f"worker error: {msg.get('message')}")
            else:
                raise ValueError(f"unexpected message type {msg['type']!r} while streaming")


def run(argv, timeout):
    failures = []

    def check(name, fn):
        try:
            fn()
            print(f"ok    {name}")
        except Exception as e:  # noqa: BLE001 - report and continue
            failures.append(name)
            print(f"FAIL  {name}: {e}")

    w = Worker(argv)
    state = {}

    def handshake():
        msg = w.recv(timeout)
        if msg["type"] != "ready":
            raise ValueError(f"first message is {msg['type']!r}, expected 'ready'")

    def text_prompt():
        w.send({"type": "prompt", "text": "describe the field", "image_b64": None})
        state["a"] = w.reply(timeout)
        if not state["a"]:
            raise ValueError("empty reply")

    def deterministic():
        w.send({"type": "prompt", "text": "describe the field", "image_b64": None})
        if w.reply(timeout) != state.get("a"):
            raise ValueError("same prompt gave a different reply")

    image = os.urandom(3000)

    def inline_image():
        w.send({"type": "prompt", "text": "what is this?", "image_b64": base64.b64encode(image).decode()})
        state["img"] = w.reply(timeout)

    def chunked_image():
        b64 = base64.b64encode(image).decode()
        for off in range(0, len(b64), 1000):
            w.send({"type": "image_chunk", "data": b64[off:off + 1000]})
        w.send({"type": "prompt", "text": "what is this?", "image_b64": None, "image_chunks": -(-len(b64) // 1000)})
        if w.reply(timeout) != state.get("img"):
            raise ValueError("chunked image reply differs from the inline one")

    def shutdown():
        w.send({"type": "shutdown"})
        try:
            w.proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            w.proc.kill()
            raise ValueError("worker did not exit within 2 s of shutdown")

    check("ready handshake", handshake)
    check("text prompt streams tokens then done", text_prompt)
    check("replies are deterministic", deterministic)
    check("inline base64 image", inline_image)
    check("image sent as chunks", chunked_image)
    check("shutdown exits", shutdown)
    if w.proc.poll() is None:
        w.proc.kill()
    return 1 if failures else 0


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--timeout", type=float, default=10.0)
    parser.add_argument("worker", nargs=argparse.REMAINDER)
    args = parser.parse_args()
    argv = args.worker[1:] if args.worker[:1] == ["--"] else args.worker
    if not argv:
        parser.error("missing worker command")
    sys.exit(run(argv, args.timeout))


if __name__ == "__main__":
    main()
