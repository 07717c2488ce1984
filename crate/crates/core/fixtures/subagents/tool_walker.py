import json
import sys

ARGS = {
    "web_search": {"query": "population of Japan", "max_results": 2},
    "web_reading": {"url": "https://stats.example.org/japan/population"},
    "browser_automation": {"action": "open", "url": "https://example.org"},
    "shell_command": {"command": "echo walked > walked.txt && cat walked.txt"},
}

query = json.loads(sys.stdin.readline())["payload"]["query"]
seen = {}
for i, tool in enumerate(t for t in query.split(",") if t):
    request = {"id": i + 1, "verb": "tool_call", "tool": tool, "args": ARGS.get(tool, {})}
    print(json.dumps(request, separators=(",", ":")), flush=True)
    response = json.loads(sys.stdin.readline())
    assert response["id"] == i + 1, response
    seen[tool] = response["ok"]
print(json.dumps({"verb": "result", "payload": seen}, separators=(",", ":")), flush=True)
