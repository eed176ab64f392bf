#!/usr/bin/env python3
"""Completion endpoint that behaves like the scripted planner.

The first request of a session (a prompt without a [Progress] block) gets the
program from --program in a fenced block. Later requests get FINAL(<answer>),
where the answer is read back from the latest observation in the prompt.

    python3 tools/stub_planner.py --program samples/plan.txt --port 8765
    scenekg ask --kg kg.json --question "..." --planner remote:http://127.0.0.1:8765/complete
"""

import argparse
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

SET_RESULT = "error: program result is a set, not an answer"


def last_observed_answer(prompt):
    for raw in reversed(prompt.split("\n")):
        line = raw.strip()
        for marker in ("-> answer: ", "-> error: "):
            p = line.rfind(marker)
            if p >= 0:
                rest = line[p + len(marker):]
                return "error: " + rest if marker == "-> error: " else rest
        if line.startswith("Observation: error: "):
            return line[len("Observation: "):]
        if line.startswith("Observation:"):
            break
    return None


def make_handler(program):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path != "/complete":
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                prompt = json.loads(self.rfile.read(length))["prompt"]
            except (ValueError, KeyError, TypeError):
                self.send_error(400, "expected {\"prompt\": ...}")
                return
            if "[Progress]" not in prompt:
                completion = "```\n" + program + "\n```"
            else:
                answer = last_observed_answer(prompt)
                completion = "FINAL(" + (answer if answer is not None else SET_RESULT) + ")"
            body = json.dumps({"completion": completion}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt, *args):
            pass

    return Handler


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--program", required=True, help="file holding the program to replay")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    args = ap.parse_args()
    with open(args.program, encoding="utf-8") as f:
        program = f.read().strip()
    server = ThreadingHTTPServer((args.host, args.port), make_handler(program))
    print(f"stub planner on http://{args.host}:{server.server_address[1]}/complete", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
