import os
import sys

# In-tree runs point FVV_PYTHONPATH at build/python; installed wheels need nothing.
if os.environ.get("FVV_PYTHONPATH"):
    sys.path.insert(0, os.environ["FVV_PYTHONPATH"])
