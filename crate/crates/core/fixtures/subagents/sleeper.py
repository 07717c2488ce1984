import os
import subprocess
import sys
import time

sys.stdin.readline()
# A grandchild in the same process group; the runner must reap it too.
subprocess.Popen(["sleep", "300"])
print("pgid %d" % os.getpgrp(), file=sys.stderr, flush=True)
time.sleep(300)
