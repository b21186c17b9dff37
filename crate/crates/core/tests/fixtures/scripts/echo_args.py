import json
import sys

# ---BEGIN TOOL---
def echo_args():
    try:
        args = json.load(sys.stdin)
        return {"status": "success", "data": args}
    except Exception as exc:
        return {"status": "error", "data": str(exc)}
# ---END TOOL---

print(json.dumps(echo_args()))
