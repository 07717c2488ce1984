import json
import sys

query = json.loads(sys.stdin.readline())["payload"]["query"]
print("cannot handle query: " + query, file=sys.stderr)
sys.exit(3)
