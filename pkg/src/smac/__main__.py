import sys

from smac.cli import main

sys.exit(main())
