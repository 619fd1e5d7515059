"""``python3 -m edgesched``."""
import sys

from .cli import main

sys.exit(main())
