import json
import sys

url = json.loads(sys.stdin.readline())["payload"]["query"]
request = {"id": 1, "verb": "tool_call", "tool": "browser_automation", "args": {"action": "open", "url": url}}
print(json.dumps(request, separators=(",", ":")), flush=True)
response = json.loads(sys.stdin.readline())
print(json.dumps({"verb": "result", "payload": response["payload"]}, separators=(",", ":")), flush=True)
