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



def main():
    mood = read_query().strip()
    found = call("tool_call", tool="web_search", args={"query": mood + " qq music", "max_results": 1})
    if not found["results"]:
        print("no track found for " + mood, file=sys.stderr)
        sys.exit(4)
    track = found["results"][0]
    report({"now_playing": track["title"], "url": track["url"]})


main()
