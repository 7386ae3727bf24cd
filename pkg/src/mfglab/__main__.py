import sys

from mfglab.cli_harness import main

sys.exit(main())
