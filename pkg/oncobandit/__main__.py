"""Allow ``python -m oncobandit``."""

from .cli import main

raise SystemExit(main())
