import json
import os
import sys


def read_query():
    if os.environ.get("AF_BROKER") == "stdio":
        return json.loads(sys.stdin.readline())["payload"]["query"]
    return sys.argv[sys.argv.index("--query") + 1]


def report(payload):
    if os.environ.get("AF_BROKER") == "stdio":
        payload = {"verb": "result", "payload": payload}
    print(json.dumps(payload, separators=(",", ":")), flush=True)


if __name__ == "__main__":
    query = read_query()
    print("echoing", len(query), "chars", file=sys.stderr)
    report(query)
