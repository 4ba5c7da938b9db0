"""``python -m privcdr``."""

import sys

from .cli import main

sys.exit(main())
