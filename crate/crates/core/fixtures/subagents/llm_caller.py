import json
import sys

query = json.loads(sys.stdin.readline())["payload"]["query"]
answers = []
for i in range(2):
    messages = [{"role": "user", "content": "step %d: %s" % (i + 1, query)}]
    print(json.dumps({"id": i + 1, "verb": "llm_call", "args": {"messages": messages}}), flush=True)
    response = json.loads(sys.stdin.readline())
    if not response["ok"]:
        print(response["payload"]["error"], file=sys.stderr)
        sys.exit(1)
    answers.append(response["payload"]["completion"])
print(json.dumps({"verb": "result", "payload": {"answers": answers}}), flush=True)
