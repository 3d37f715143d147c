import os
import sys

# Make the top-level packages importable when pytest runs from any directory
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))
