import json
import os
import sys

path = json.loads(sys.stdin.readline())["payload"]["query"]
received = []
with open(path) as requests:
    for line in requests:
        if not line.strip():
            continue
        sys.stdout.write(line if line.endswith("\n") else line + "\n")
        sys.stdout.flush()
        received.append(sys.stdin.readline())
with open(os.path.join(os.environ["AF_WORKSPACE_OUT"], "responses.jsonl"), "w") as out:
    out.writelines(received)
print(json.dumps({"verb": "result", "payload": {"count": len(received)}}), flush=True)
