import json
import os
import sys

BROKERED = os.environ.get("AF_BROKER") == "stdio"
_next_id = 0


def read_query():
    if BROKERED:
        return json.loads(sys.stdin.readline())["payload"]["query"]
    return sys.argv[sys.argv.index("--query") + 1]


def call(verb, **fields):
    global _next_id
    _next_id += 1
    request = dict(id=_next_id, verb=verb, **fields)
    print(json.dumps(request, separators=(",", ":")), flush=True)
    response = json.loads(sys.stdin.readline())
    if not response["ok"]:
        raise RuntimeError(response["payload"].get("error", "call failed"))
    return response["payload"]


def report(payload):
    if BROKERED:
        payload = {"verb": "result", "payload": payload}
    print(json.dumps(payload, separators=(",", ":")), flush=True)

import re

FIELD = re.compile(r"(\w+)\s*=\s*([^;]*)")


def parse(spec):
    return {m.group(1): m.group(2).strip() for m in FIELD.finditer(spec)}


def render(fields):
    lines = ["# " + fields["name"], "", fields["description"]]
    if fields.get("usage"):
        lines += ["", "## Usage", "", "    " + fields["usage"]]
    with open("README.md", "w") as f:
        f.write("\n".join(lines) + "\n")
    report({"readme": "README.md", "title": fields["name"]})


render(parse(read_query()))
