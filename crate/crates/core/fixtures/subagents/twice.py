import json
import sys

sys.stdin.readline()
print(json.dumps({"verb": "result", "payload": 1}), flush=True)
print(json.dumps({"verb": "result", "payload": 2}), flush=True)
