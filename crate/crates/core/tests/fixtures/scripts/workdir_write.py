import json
import os

with open("scratch.txt", "w") as fh:
    fh.write("ok")
os.makedirs("sub/dir", exist_ok=True)
print(json.dumps({"status": "success", "data": sorted(os.listdir("."))}))
