import os
import sys

# Allow running the suite from a fresh checkout without installing.
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
