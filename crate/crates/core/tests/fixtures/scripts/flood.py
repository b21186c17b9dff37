import sys

chunk = "x" * 65536
for _ in range(32):
    sys.stdout.write(chunk)
sys.stdout.flush()
