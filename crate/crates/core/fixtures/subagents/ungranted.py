import json
import sys

query = json.loads(sys.stdin.readline())["payload"]["query"]
request = {"id": 1, "verb": "tool_call", "tool": "web_search", "args": {"query": query}}
print(json.dumps(request, separators=(",", ":")), flush=True)
response = json.loads(sys.stdin.readline())
if not response["ok"]:
    print("web_search failed: " + response["payload"]["error"], file=sys.stderr)
    sys.exit(2)
print(json.dumps({"verb": "result", "payload": response["payload"]}), flush=True)
