import sys

from abx.cli import main

sys.exit(main())
