"""Allow ``python -m genhedge``."""

import sys

from .cli import main

sys.exit(main())
